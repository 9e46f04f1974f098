#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace prefalign {

// Three quality tiers of the same note, ranked gold > mid > original.
struct QualityTriple {
  std::string note_id;
  std::string original;
  std::string mid;
  std::string gold;
};

enum class TierPair { gold_vs_mid, gold_vs_orig, mid_vs_orig };

std::string tier_pair_name(TierPair t);
TierPair tier_pair_from_name(const std::string& name);

struct PreferenceExample {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::string source_note_id;
  TierPair tier_pair = TierPair::gold_vs_mid;

  bool operator==(const PreferenceExample&) const = default;
};

// renders the instruction template around the note text; substitution
// happens exactly once, at the template's own placeholder
std::string render_prompt(const std::string& note_text);

struct PairBuildResult {
  std::vector<PreferenceExample> examples;
  std::size_t skipped = 0;
  std::vector<std::string> skip_log;  // "note_id: tier_pair" per skip
};

// emits (gold,mid), (gold,orig), (mid,orig) per triple, in that order;
// pairs whose two tiers are byte-identical are skipped, not fatal
PairBuildResult build_pairs(const std::vector<QualityTriple>& triples);

void write_pairs_jsonl(const std::vector<PreferenceExample>& examples,
                       const std::string& path);
std::vector<PreferenceExample> read_pairs_jsonl(const std::string& path);

// one JSONL file of {note_id, original, mid, gold} objects
std::vector<QualityTriple> read_triples_jsonl(const std::string& path);
// three aligned JSONL files of {note_id, text}, matched by note_id
std::vector<QualityTriple> read_tier_files(const std::string& gold_path,
                                           const std::string& mid_path,
                                           const std::string& orig_path);
void write_tier_file(const std::vector<std::pair<std::string, std::string>>& entries,
                     const std::string& path);

}  // namespace prefalign
