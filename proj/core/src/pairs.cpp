#include "prefalign/pairs.hpp"

#include <fstream>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace prefalign {

namespace {

constexpr const char* kTemplate =
    "Transform this nursing documentation into clear, professional format. "
    "Requirements: 1) Replace non-medical abbreviations with full words 2) "
    "Maintain clinical accuracy 3) Use proper structure and formatting 4) Keep "
    "standard medical abbreviations (BP, HR, O2, etc.) 5) Ensure any healthcare "
    "provider can understand it 6) Output only the revised note with no "
    "additional text or explanations. Original note: {text}";

constexpr const char* kPlaceholder = "{text}";

}  // namespace

std::string tier_pair_name(TierPair t) {
  switch (t) {
    case TierPair::gold_vs_mid: return "gold_vs_mid";
    case TierPair::gold_vs_orig: return "gold_vs_orig";
    case TierPair::mid_vs_orig: return "mid_vs_orig";
  }
  throw std::logic_error("unknown tier pair");
}

TierPair tier_pair_from_name(const std::string& name) {
  if (name == "gold_vs_mid") return TierPair::gold_vs_mid;
  if (name == "gold_vs_orig") return TierPair::gold_vs_orig;
  if (name == "mid_vs_orig") return TierPair::mid_vs_orig;
  throw std::runtime_error("unknown tier_pair value: " + name);
}

std::string render_prompt(const std::string& note_text) {
  if (note_text.empty()) throw std::invalid_argument("render_prompt: empty note text");
  const std::string tpl = kTemplate;
  const std::size_t pos = tpl.find(kPlaceholder);
  std::string out = tpl;
  out.replace(pos, std::string(kPlaceholder).size(), note_text);
  return out;
}

PairBuildResult build_pairs(const std::vector<QualityTriple>& triples) {
  PairBuildResult result;
  result.examples.reserve(triples.size() * 3);
  for (const auto& t : triples) {
    if (t.original.empty() || t.mid.empty() || t.gold.empty()) {
      throw std::invalid_argument("build_pairs: empty tier text for note " + t.note_id);
    }
    const std::string prompt = render_prompt(t.original);
    const struct {
      const std::string* chosen;
      const std::string* rejected;
      TierPair tier;
    } combos[] = {
        {&t.gold, &t.mid, TierPair::gold_vs_mid},
        {&t.gold, &t.original, TierPair::gold_vs_orig},
        {&t.mid, &t.original, TierPair::mid_vs_orig},
    };
    for (const auto& c : combos) {
      if (*c.chosen == *c.rejected) {
        ++result.skipped;
        result.skip_log.push_back(t.note_id + ": " + tier_pair_name(c.tier));
        continue;
      }
      result.examples.push_back(PreferenceExample{
          prompt, *c.chosen, *c.rejected, t.note_id, c.tier});
    }
  }
  return result;
}

void write_pairs_jsonl(const std::vector<PreferenceExample>& examples,
                       const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& e : examples) {
    nlohmann::json j{{"prompt", e.prompt},
                     {"chosen", e.chosen},
                     {"rejected", e.rejected},
                     {"source_note_id", e.source_note_id},
                     {"tier_pair", tier_pair_name(e.tier_pair)}};
    os << j.dump() << '\n';
  }
}

std::vector<PreferenceExample> read_pairs_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<PreferenceExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": malformed JSON on line " + std::to_string(lineno));
    }
    try {
      PreferenceExample e;
      e.prompt = j.at("prompt").get<std::string>();
      e.chosen = j.at("chosen").get<std::string>();
      e.rejected = j.at("rejected").get<std::string>();
      e.source_note_id = j.at("source_note_id").get<std::string>();
      e.tier_pair = tier_pair_from_name(j.at("tier_pair").get<std::string>());
      out.push_back(std::move(e));
    } catch (const nlohmann::json::out_of_range&) {
      throw std::runtime_error(path + ": missing key on line " + std::to_string(lineno));
    }
  }
  return out;
}

std::vector<QualityTriple> read_triples_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<QualityTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": malformed JSON on line " + std::to_string(lineno));
    }
    QualityTriple t;
    t.note_id = j.at("note_id").get<std::string>();
    t.original = j.at("original").get<std::string>();
    t.mid = j.at("mid").get<std::string>();
    t.gold = j.at("gold").get<std::string>();
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

std::map<std::string, std::string> read_tier_map(const std::string& path,
                                                 std::vector<std::string>* order) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": malformed JSON on line " + std::to_string(lineno));
    }
    const auto id = j.at("note_id").get<std::string>();
    if (order != nullptr) order->push_back(id);
    out[id] = j.at("text").get<std::string>();
  }
  return out;
}

}  // namespace

std::vector<QualityTriple> read_tier_files(const std::string& gold_path,
                                           const std::string& mid_path,
                                           const std::string& orig_path) {
  std::vector<std::string> order;
  const auto orig = read_tier_map(orig_path, &order);
  const auto mid = read_tier_map(mid_path, nullptr);
  const auto gold = read_tier_map(gold_path, nullptr);
  std::vector<QualityTriple> out;
  for (const auto& id : order) {
    const auto mi = mid.find(id);
    const auto gi = gold.find(id);
    if (mi == mid.end() || gi == gold.end()) {
      throw std::runtime_error("tier files misaligned: note_id " + id +
                               " missing from mid or gold tier");
    }
    out.push_back(QualityTriple{id, orig.at(id), mi->second, gi->second});
  }
  return out;
}

void write_tier_file(const std::vector<std::pair<std::string, std::string>>& entries,
                     const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& [id, text] : entries) {
    nlohmann::json j{{"note_id", id}, {"text", text}};
    os << j.dump() << '\n';
  }
}

}  // namespace prefalign
