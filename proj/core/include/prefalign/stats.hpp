#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace prefalign {

struct PairedSample {
  std::vector<double> a;
  std::vector<double> b;
};

enum class WilcoxonMode { automatic, exact, normal };

struct StatTestResult {
  double statistic = 0.0;
  double p_raw = 1.0;
  std::optional<double> p_adjusted;
  std::string method;      // wilcoxon_exact | wilcoxon_normal | paired_t
  std::string adjustment;  // none | benjamini_hochberg | bonferroni
  std::size_t n_effective = 0;
  bool degenerate = false;  // all differences zero
};

// exact enumeration for n_effective <= exact_cutoff, else normal
// approximation with midranks, tie correction and continuity correction
StatTestResult wilcoxon_signed_rank(const PairedSample& sample,
                                    WilcoxonMode mode = WilcoxonMode::automatic,
                                    std::size_t exact_cutoff = 25);

// step-up FDR adjustment; result in input order, clipped to [0,1]
std::vector<double> benjamini_hochberg(const std::vector<double>& p_values);

StatTestResult paired_t_test(const PairedSample& sample);

std::vector<double> bonferroni(const std::vector<double>& p_values, std::size_t m);
double bonferroni_threshold(double alpha, std::size_t m);

double normal_cdf(double z);
double regularized_incomplete_beta(double a, double b, double x);
// two-sided only needs the CDF; dof > 0
double student_t_cdf(double t, double dof);

}  // namespace prefalign
