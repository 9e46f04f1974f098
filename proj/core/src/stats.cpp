#include "prefalign/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>

namespace prefalign {

namespace {

void check_paired(const PairedSample& s) {
  if (s.a.size() != s.b.size()) {
    throw std::invalid_argument("paired sample: size mismatch");
  }
  if (s.a.empty()) throw std::invalid_argument("paired sample: empty");
  for (std::size_t i = 0; i < s.a.size(); ++i) {
    if (!std::isfinite(s.a[i]) || !std::isfinite(s.b[i])) {
      throw std::invalid_argument("paired sample: nonfinite value");
    }
  }
}

// midranks of |d|, doubled so ties stay integral
std::vector<long> doubled_midranks(const std::vector<double>& abs_d) {
  const std::size_t n = abs_d.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return abs_d[i] < abs_d[j]; });
  std::vector<long> rank2(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_d[idx[j + 1]] == abs_d[idx[i]]) ++j;
    // midrank of positions i..j (1-based ranks), doubled: (i+1 + j+1)
    const long mid2 = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = mid2;
    i = j + 1;
  }
  return rank2;
}

}  // namespace

StatTestResult wilcoxon_signed_rank(const PairedSample& sample, WilcoxonMode mode,
                                    std::size_t exact_cutoff) {
  check_paired(sample);
  std::vector<double> d;
  for (std::size_t i = 0; i < sample.a.size(); ++i) {
    const double di = sample.a[i] - sample.b[i];
    if (di != 0.0) d.push_back(di);
  }
  StatTestResult result;
  result.adjustment = "none";
  result.n_effective = d.size();
  if (d.empty()) {
    result.statistic = 0.0;
    result.p_raw = 1.0;
    result.degenerate = true;
    result.method = "wilcoxon_exact";
    return result;
  }
  const std::size_t n = d.size();
  std::vector<double> abs_d(n);
  for (std::size_t i = 0; i < n; ++i) abs_d[i] = std::abs(d[i]);
  const std::vector<long> rank2 = doubled_midranks(abs_d);
  long wplus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (d[i] > 0.0) wplus2 += rank2[i];
  }
  const long wminus2 = total2 - wplus2;
  // signed statistic (W+ - W-); swapping a and b negates it
  result.statistic = static_cast<double>(wplus2 - wminus2) / 2.0;
  const long w2 = std::min(wplus2, wminus2);

  const bool exact = mode == WilcoxonMode::exact ||
                     (mode == WilcoxonMode::automatic && n <= exact_cutoff);
  if (exact) {
    if (n > 62) throw std::invalid_argument("wilcoxon: exact mode infeasible for n > 62");
    // full enumeration of sign assignments via Gray code
    const std::uint64_t total = 1ull << n;
    std::uint64_t count = 0;
    long s2 = 0;  // rank2 sum of the current positive set (starts empty)
    std::uint64_t gray = 0;
    for (std::uint64_t it = 0;; ++it) {
      if (std::min(s2, total2 - s2) <= w2) ++count;
      if (it + 1 == total) break;
      const std::uint64_t next_gray = (it + 1) ^ ((it + 1) >> 1);
      const std::uint64_t changed = gray ^ next_gray;
      int bit = 0;
      while (((changed >> bit) & 1ull) == 0) ++bit;
      if ((next_gray >> bit) & 1ull) {
        s2 += rank2[static_cast<std::size_t>(bit)];
      } else {
        s2 -= rank2[static_cast<std::size_t>(bit)];
      }
      gray = next_gray;
    }
    result.p_raw = static_cast<double>(count) / static_cast<double>(total);
    result.method = "wilcoxon_exact";
  } else {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups of |d|
    std::vector<double> sorted_abs = abs_d;
    std::sort(sorted_abs.begin(), sorted_abs.end());
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && sorted_abs[j + 1] == sorted_abs[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      var -= (t * t * t - t) / 48.0;
      i = j + 1;
    }
    if (var <= 0.0) {
      result.p_raw = 1.0;
      result.method = "wilcoxon_normal";
      return result;
    }
    const double w = static_cast<double>(w2) / 2.0;
    const double z = (w - mu + 0.5) / std::sqrt(var);
    result.p_raw = std::min(1.0, 2.0 * normal_cdf(z));
    result.method = "wilcoxon_normal";
  }
  result.p_raw = std::min(1.0, std::max(0.0, result.p_raw));
  return result;
}

std::vector<double> benjamini_hochberg(const std::vector<double>& p_values) {
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("benjamini_hochberg: p outside [0,1]");
    }
  }
  const std::size_t m = p_values.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });
  std::vector<double> adjusted(m, 0.0);
  double running_min = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double q =
        p_values[idx[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    running_min = std::min(running_min, std::min(1.0, q));
    adjusted[idx[r]] = running_min;
  }
  return adjusted;
}

std::vector<double> bonferroni(const std::vector<double>& p_values, std::size_t m) {
  if (m < p_values.size()) {
    throw std::invalid_argument("bonferroni: m must be >= number of p-values");
  }
  std::vector<double> out;
  out.reserve(p_values.size());
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("bonferroni: p outside [0,1]");
    }
    out.push_back(std::min(1.0, p * static_cast<double>(m)));
  }
  return out;
}

double bonferroni_threshold(double alpha, std::size_t m) {
  if (m == 0) throw std::invalid_argument("bonferroni_threshold: m must be >= 1");
  return alpha / static_cast<double>(m);
}

StatTestResult paired_t_test(const PairedSample& sample) {
  check_paired(sample);
  const std::size_t n = sample.a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need n >= 2");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = sample.a[i] - sample.b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(n - 1);
  if (var <= 0.0) {
    throw std::invalid_argument("paired_t_test: zero variance of differences");
  }
  const double t = mean / std::sqrt(var / static_cast<double>(n));
  const double dof = static_cast<double>(n - 1);
  StatTestResult result;
  result.statistic = t;
  // two-sided: P(|T| >= |t|) = I_{v/(v+t^2)}(v/2, 1/2)
  result.p_raw = regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
  result.p_raw = std::min(1.0, std::max(0.0, result.p_raw));
  result.method = "paired_t";
  result.adjustment = "none";
  result.n_effective = n;
  return result;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

namespace {

// continued fraction for the incomplete beta function (modified Lentz)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) {
    throw std::invalid_argument("incomplete beta: a, b must be positive");
  }
  if (x < 0.0 || x > 1.0) {
    throw std::invalid_argument("incomplete beta: x outside [0,1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(ln_front) * betacf(a, b, x) / a;
  }
  return 1.0 - std::exp(ln_front) * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("student_t_cdf: dof must be positive");
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

}  // namespace prefalign
