#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "prefalign/pairs.hpp"
#include "test_util.hpp"

using namespace prefalign;
using namespace testutil;

namespace {

QualityTriple make_triple(int i) {
  const std::string n = std::to_string(i);
  return QualityTriple{"note-" + n, "original text " + n, "mid text " + n,
                       "gold text " + n};
}

}  // namespace

TEST_CASE("render_prompt substitutes the note exactly once") {
  const std::string p = render_prompt("PATIENT RESTING.");
  CHECK(p.find("PATIENT RESTING.") != std::string::npos);
  CHECK(p.find("{text}") == std::string::npos);
  CHECK(p.rfind("Original note: PATIENT RESTING.") == p.size() -
            std::string("Original note: PATIENT RESTING.").size());

  SUBCASE("a note containing the placeholder string stays intact") {
    const std::string q = render_prompt("note with {text} inside");
    CHECK(q.find("note with {text} inside") != std::string::npos);
    // exactly one occurrence of the literal remains (the note's own)
    const std::size_t first = q.find("{text}");
    CHECK(first != std::string::npos);
    CHECK(q.find("{text}", first + 1) == std::string::npos);
  }

  SUBCASE("empty note is an error") {
    CHECK_THROWS_AS(render_prompt(""), std::invalid_argument);
  }
}

TEST_CASE("tier pair names round-trip") {
  for (TierPair t : {TierPair::gold_vs_mid, TierPair::gold_vs_orig,
                     TierPair::mid_vs_orig}) {
    CHECK(tier_pair_from_name(tier_pair_name(t)) == t);
  }
  CHECK_THROWS_AS(tier_pair_from_name("bogus"), std::runtime_error);
}

TEST_CASE("build_pairs emits three ordered pairs per triple") {
  const auto r = build_pairs({make_triple(1)});
  REQUIRE(r.examples.size() == 3);
  CHECK(r.skipped == 0);
  CHECK(r.examples[0].tier_pair == TierPair::gold_vs_mid);
  CHECK(r.examples[1].tier_pair == TierPair::gold_vs_orig);
  CHECK(r.examples[2].tier_pair == TierPair::mid_vs_orig);
  CHECK(r.examples[0].chosen == "gold text 1");
  CHECK(r.examples[0].rejected == "mid text 1");
  CHECK(r.examples[1].rejected == "original text 1");
  CHECK(r.examples[2].chosen == "mid text 1");
  // all three share the prompt rendered from the original
  for (const auto& e : r.examples) {
    CHECK(e.prompt == render_prompt("original text 1"));
    CHECK(e.source_note_id == "note-1");
  }
}

TEST_CASE("7,070 triples yield exactly 21,210 pairs") {
  std::vector<QualityTriple> triples;
  triples.reserve(7070);
  for (int i = 0; i < 7070; ++i) triples.push_back(make_triple(i));
  const auto r = build_pairs(triples);
  CHECK(r.examples.size() == 21210);
  CHECK(r.skipped == 0);
}

TEST_CASE("byte-identical tiers are skipped with a log entry") {
  QualityTriple t{"dup", "same text", "same text", "gold text"};
  const auto r = build_pairs({t});
  // mid == original kills mid_vs_orig only
  REQUIRE(r.examples.size() == 2);
  CHECK(r.skipped == 1);
  REQUIRE(r.skip_log.size() == 1);
  CHECK(r.skip_log[0] == "dup: mid_vs_orig");

  SUBCASE("empty tier text is fatal, not skipped") {
    QualityTriple bad{"x", "", "m", "g"};
    CHECK_THROWS_AS(build_pairs({bad}), std::invalid_argument);
  }
}

TEST_CASE("pairs JSONL round trip") {
  const std::string dir = scratch_dir("pairs");
  const auto r = build_pairs({make_triple(1), make_triple(2)});
  const std::string path = dir + "/pairs.jsonl";
  write_pairs_jsonl(r.examples, path);
  const auto back = read_pairs_jsonl(path);
  CHECK(back == r.examples);

  SUBCASE("corrupted line reports its number") {
    std::string body = read_file(path);
    body += "{not json\n";
    write_file(path, body);
    CHECK_THROWS_WITH_AS(read_pairs_jsonl(path), doctest::Contains("line 7"),
                         std::runtime_error);
  }

  SUBCASE("missing key reports its line") {
    write_file(path, "{\"prompt\": \"p\", \"chosen\": \"c\"}\n");
    CHECK_THROWS_WITH_AS(read_pairs_jsonl(path), doctest::Contains("line 1"),
                         std::runtime_error);
  }
}

TEST_CASE("tier files are aligned by note_id") {
  const std::string dir = scratch_dir("tiers");
  write_tier_file({{"1", "orig one"}, {"2", "orig two"}}, dir + "/orig.jsonl");
  write_tier_file({{"1", "gold one"}, {"2", "gold two"}}, dir + "/gold.jsonl");
  write_tier_file({{"1", "mid one"}, {"2", "mid two"}}, dir + "/mid.jsonl");
  const auto triples =
      read_tier_files(dir + "/gold.jsonl", dir + "/mid.jsonl", dir + "/orig.jsonl");
  REQUIRE(triples.size() == 2);
  CHECK(triples[0].note_id == "1");
  CHECK(triples[0].original == "orig one");
  CHECK(triples[0].mid == "mid one");
  CHECK(triples[0].gold == "gold one");
  CHECK(triples[1].gold == "gold two");

  SUBCASE("misaligned ids are an error") {
    write_tier_file({{"1", "mid one"}, {"3", "mid three"}}, dir + "/mid.jsonl");
    CHECK_THROWS_AS(read_tier_files(dir + "/gold.jsonl", dir + "/mid.jsonl",
                                    dir + "/orig.jsonl"),
                    std::runtime_error);
  }

  SUBCASE("combined triples file") {
    write_file(dir + "/triples.jsonl",
               "{\"note_id\":\"a\",\"original\":\"o\",\"mid\":\"m\",\"gold\":\"g\"}\n");
    const auto t = read_triples_jsonl(dir + "/triples.jsonl");
    REQUIRE(t.size() == 1);
    CHECK(t[0].gold == "g");
  }
}
