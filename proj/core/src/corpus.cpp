#include "prefalign/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace prefalign {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

long parse_long(const std::string& field, std::size_t row, const std::string& column) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(trim(field), &pos);
    if (pos != trim(field).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("CSV row " + std::to_string(row) + ": cannot parse " +
                             column + " value '" + field + "'");
  }
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name,
                        const std::string& path) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (upper(trim(header[i])) == name) return i;
  }
  throw std::runtime_error(path + ": missing required column " + name);
}

}  // namespace

std::size_t count_words(const std::string& text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open CSV file: " + path);
  std::string content((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  const std::size_t n = content.size();
  auto end_field = [&] { row.push_back(std::move(field)); field.clear(); };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };
  while (i < n) {
    const char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < n && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // swallow; CRLF handled at the '\n'
    } else if (c == '\n') {
      end_row();
    } else {
      field.push_back(c);
    }
    ++i;
  }
  if (quoted) throw std::runtime_error(path + ": unterminated quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

std::vector<NoteRecord> load_notes(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw std::runtime_error(path + ": empty CSV (no header)");
  const auto& header = rows[0];
  const std::size_t c_row = find_column(header, "ROW_ID", path);
  const std::size_t c_hadm = find_column(header, "HADM_ID", path);
  const std::size_t c_cat = find_column(header, "CATEGORY", path);
  const std::size_t c_text = find_column(header, "TEXT", path);
  std::vector<NoteRecord> notes;
  notes.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r];
    if (fields.size() <= std::max({c_row, c_hadm, c_cat, c_text})) {
      throw std::runtime_error(path + ": row " + std::to_string(r) + " has too few fields");
    }
    NoteRecord note;
    note.row_id = parse_long(fields[c_row], r, "ROW_ID");
    note.hadm_id = parse_long(fields[c_hadm], r, "HADM_ID");
    note.category = fields[c_cat];
    note.text = fields[c_text];
    note.word_count = count_words(note.text);
    notes.push_back(std::move(note));
  }
  return notes;
}

std::vector<DiagnosisRecord> load_diagnoses(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw std::runtime_error(path + ": empty CSV (no header)");
  const auto& header = rows[0];
  const std::size_t c_hadm = find_column(header, "HADM_ID", path);
  const std::size_t c_code = find_column(header, "ICD9_CODE", path);
  std::vector<DiagnosisRecord> out;
  out.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r];
    if (fields.size() <= std::max(c_hadm, c_code)) {
      throw std::runtime_error(path + ": row " + std::to_string(r) + " has too few fields");
    }
    DiagnosisRecord d;
    d.hadm_id = parse_long(fields[c_hadm], r, "HADM_ID");
    d.icd9_code = trim(fields[c_code]);
    if (d.icd9_code.empty()) {
      throw std::runtime_error(path + ": row " + std::to_string(r) + " has empty ICD9_CODE");
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<NoteRecord> join_heart_failure(const std::vector<NoteRecord>& notes,
                                           const std::vector<DiagnosisRecord>& diagnoses,
                                           const std::string& code_prefix) {
  std::unordered_set<long> matching;
  for (const auto& d : diagnoses) {
    if (d.icd9_code.compare(0, code_prefix.size(), code_prefix) == 0) {
      matching.insert(d.hadm_id);
    }
  }
  std::vector<NoteRecord> out;
  for (const auto& note : notes) {
    if (matching.count(note.hadm_id) != 0) out.push_back(note);
  }
  return out;
}

std::vector<NoteRecord> filter_category(const std::vector<NoteRecord>& notes,
                                        const std::string& category_value) {
  std::vector<NoteRecord> out;
  for (const auto& note : notes) {
    if (trim(note.category) == category_value) out.push_back(note);
  }
  return out;
}

bool is_structured_note(const std::string& text, double threshold) {
  std::istringstream is(text);
  std::string line;
  std::size_t nonblank = 0, keyvalue = 0;
  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    ++nonblank;
    // `<token>: <value>` with exactly one colon and no space before it
    const std::size_t colon = t.find(':');
    if (colon == std::string::npos || colon == 0) continue;
    if (t.find(':', colon + 1) != std::string::npos) continue;
    const std::string key = t.substr(0, colon);
    if (key.find_first_of(" \t") != std::string::npos) continue;
    ++keyvalue;
  }
  if (nonblank == 0) return false;
  return static_cast<double>(keyvalue) > threshold * static_cast<double>(nonblank);
}

std::pair<std::vector<NoteRecord>, QualityBreakdown> quality_control(
    const std::vector<NoteRecord>& notes, std::size_t min_words) {
  QualityBreakdown stats;
  std::vector<NoteRecord> out;
  std::unordered_map<long, std::unordered_set<std::string>> seen;
  for (const auto& note : notes) {
    if (note.word_count < min_words) {
      ++stats.removed_short;
      continue;
    }
    if (is_structured_note(note.text)) {
      ++stats.removed_structured;
      continue;
    }
    if (!seen[note.hadm_id].insert(note.text).second) {
      ++stats.removed_duplicate;
      continue;
    }
    out.push_back(note);
  }
  return {std::move(out), stats};
}

std::pair<std::vector<NoteRecord>, CorpusStats> extract_corpus(
    const std::vector<NoteRecord>& notes,
    const std::vector<DiagnosisRecord>& diagnoses,
    const std::string& category_value, std::size_t min_words) {
  CorpusStats stats;
  stats.input_count = notes.size();
  auto joined = join_heart_failure(notes, diagnoses);
  stats.after_join = joined.size();
  auto categorized = filter_category(joined, category_value);
  stats.after_category = categorized.size();
  auto [survivors, breakdown] = quality_control(categorized, min_words);
  stats.after_quality = survivors.size();
  stats.final_count = survivors.size();
  return {std::move(survivors), stats};
}

void write_corpus_jsonl(const std::vector<NoteRecord>& notes, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& note : notes) {
    nlohmann::json j{{"row_id", note.row_id},
                     {"hadm_id", note.hadm_id},
                     {"category", note.category},
                     {"text", note.text}};
    os << j.dump() << '\n';
  }
}

std::vector<NoteRecord> read_corpus_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::vector<NoteRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": malformed JSON on line " + std::to_string(lineno));
    }
    NoteRecord note;
    note.row_id = j.at("row_id").get<long>();
    note.hadm_id = j.at("hadm_id").get<long>();
    note.category = j.at("category").get<std::string>();
    note.text = j.at("text").get<std::string>();
    note.word_count = count_words(note.text);
    out.push_back(std::move(note));
  }
  return out;
}

void write_corpus_stats_json(const CorpusStats& stats, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  nlohmann::json j{{"input_count", stats.input_count},
                   {"after_join", stats.after_join},
                   {"after_category", stats.after_category},
                   {"after_quality", stats.after_quality},
                   {"final_count", stats.final_count}};
  os << j.dump(2) << '\n';
}

}  // namespace prefalign
