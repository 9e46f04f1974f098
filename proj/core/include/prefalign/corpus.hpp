#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace prefalign {

struct NoteRecord {
  long row_id = 0;
  long hadm_id = 0;
  std::string category;
  std::string text;
  std::size_t word_count = 0;  // whitespace-delimited tokens of text

  bool operator==(const NoteRecord&) const = default;
};

struct DiagnosisRecord {
  long hadm_id = 0;
  std::string icd9_code;
};

struct CorpusStats {
  std::size_t input_count = 0;
  std::size_t after_join = 0;
  std::size_t after_category = 0;
  std::size_t after_quality = 0;
  std::size_t final_count = 0;
};

std::size_t count_words(const std::string& text);

// RFC-4180 CSV: quoted fields, embedded newlines/commas, doubled quotes.
// Returns rows of fields; the first row is the header.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

// requires header columns ROW_ID, HADM_ID, CATEGORY, TEXT (case-insensitive)
std::vector<NoteRecord> load_notes(const std::string& path);
// requires header columns HADM_ID, ICD9_CODE (case-insensitive)
std::vector<DiagnosisRecord> load_diagnoses(const std::string& path);

// keeps notes whose admission has at least one diagnosis code with the given
// prefix ("LIKE '428%'" semantics); input order preserved, no duplicates added
std::vector<NoteRecord> join_heart_failure(const std::vector<NoteRecord>& notes,
                                           const std::vector<DiagnosisRecord>& diagnoses,
                                           const std::string& code_prefix = "428");

// exact match on the whitespace-trimmed category string, case-sensitive
std::vector<NoteRecord> filter_category(const std::vector<NoteRecord>& notes,
                                        const std::string& category_value = "Nursing/other");

// a note is "structured" when more than `threshold` of its nonblank lines
// look like a single `key: value` entry
bool is_structured_note(const std::string& text, double threshold = 0.5);

struct QualityBreakdown {
  std::size_t removed_short = 0;
  std::size_t removed_structured = 0;
  std::size_t removed_duplicate = 0;
};

// drops short notes, structured entries, and exact (hadm_id, text) duplicates
// (first occurrence kept); order-stable
std::pair<std::vector<NoteRecord>, QualityBreakdown> quality_control(
    const std::vector<NoteRecord>& notes, std::size_t min_words = 50);

// full extraction pipeline; fills CorpusStats stage by stage
std::pair<std::vector<NoteRecord>, CorpusStats> extract_corpus(
    const std::vector<NoteRecord>& notes,
    const std::vector<DiagnosisRecord>& diagnoses,
    const std::string& category_value = "Nursing/other",
    std::size_t min_words = 50);

void write_corpus_jsonl(const std::vector<NoteRecord>& notes, const std::string& path);
std::vector<NoteRecord> read_corpus_jsonl(const std::string& path);
void write_corpus_stats_json(const CorpusStats& stats, const std::string& path);

}  // namespace prefalign
