#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "hmde/corpus.hpp"
#include "hmde/errors.hpp"

using namespace hmde;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/hmde_test_") + name;
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

Document make_doc(std::string id, std::string lang, std::string concept_id,
                  std::vector<std::string> cats) {
  Document d;
  d.doc_id = std::move(id);
  d.lang = std::move(lang);
  d.concept_id = std::move(concept_id);
  d.categories = std::move(cats);
  d.title = "t";
  d.sentences = {"some words here."};
  return d;
}

// Exhaustive reference: every (anchor, positive) pair that admits at least one
// valid negative, with the set of all candidate negatives.
struct OraclePair {
  std::string anchor, positive;
  std::set<std::string> negatives;
};

std::vector<OraclePair> oracle_pairs(const std::vector<Document>& docs) {
  std::vector<OraclePair> out;
  for (const Document& a : docs)
    for (const Document& p : docs) {
      if (a.concept_id != p.concept_id || a.lang == p.lang) continue;
      OraclePair pair{a.doc_id, p.doc_id, {}};
      for (const Document& n : docs) {
        if (n.lang != a.lang || n.concept_id == a.concept_id) continue;
        bool shared = false;
        for (const auto& c : n.categories)
          if (std::find(a.categories.begin(), a.categories.end(), c) !=
              a.categories.end())
            shared = true;
        if (shared) pair.negatives.insert(n.doc_id);
      }
      if (!pair.negatives.empty()) out.push_back(std::move(pair));
    }
  return out;
}

}  // namespace

TEST_CASE("load_dump on an empty file gives an empty list") {
  const std::string path = temp_path("empty.jsonl");
  write_file(path, "");
  CHECK(load_dump(path).empty());
}

TEST_CASE("load_dump preserves record order") {
  const std::string path = temp_path("three.jsonl");
  write_file(
      path,
      R"({"doc_id":"a","lang":"en","concept_id":"Q1","categories":["c1"],"title":"A","sentences":["One."]})"
      "\n"
      R"({"doc_id":"b","lang":"de","concept_id":"Q1","categories":["c1"],"title":"B","text":"Zwei. Drei."})"
      "\n"
      R"({"doc_id":"c","lang":"en","concept_id":"Q2","categories":["c2"],"title":"C","sentences":["Four."]})"
      "\n");
  std::vector<Document> docs = load_dump(path);
  REQUIRE(docs.size() == 3);
  CHECK(docs[0].doc_id == "a");
  CHECK(docs[1].doc_id == "b");
  CHECK(docs[1].sentences == std::vector<std::string>{"Zwei.", "Drei."});
  CHECK(docs[2].doc_id == "c");
}

TEST_CASE("load_dump rejects missing fields and duplicate ids") {
  const std::string bad = temp_path("bad.jsonl");
  write_file(bad,
             R"({"doc_id":"a","lang":"en","categories":[],"title":"A","sentences":["x."]})"
             "\n");
  try {
    load_dump(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("concept_id") != std::string::npos);
  }

  const std::string dup = temp_path("dup.jsonl");
  write_file(
      dup,
      R"({"doc_id":"a","lang":"en","concept_id":"Q1","categories":[],"title":"A","sentences":["x."]})"
      "\n"
      R"({"doc_id":"a","lang":"de","concept_id":"Q1","categories":[],"title":"A","sentences":["x."]})"
      "\n");
  CHECK_THROWS_AS(load_dump(dup), IntegrityError);
}

TEST_CASE("dump round trip") {
  std::vector<Document> docs = {make_doc("d1", "en", "Q1", {"c1", "c2"}),
                                make_doc("d2", "de", "Q1", {"c1"})};
  const std::string path = temp_path("roundtrip.jsonl");
  save_dump(docs, path);
  std::vector<Document> back = load_dump(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].doc_id == docs[0].doc_id);
  CHECK(back[0].categories == docs[0].categories);
  CHECK(back[1].sentences == docs[1].sentences);
}

TEST_CASE("sentence splitting") {
  CHECK(split_sentences("A b. C d.") ==
        std::vector<std::string>{"A b.", "C d."});
  CHECK(split_sentences("no terminator") ==
        std::vector<std::string>{"no terminator"});
  CHECK(split_sentences("x.\ny") == std::vector<std::string>{"x.", "y"});
  CHECK(split_sentences("Really? Yes! Ok.") ==
        std::vector<std::string>{"Really?", "Yes!", "Ok."});
  CHECK(split_sentences("").empty());
  CHECK(split_sentences("e.g.x stays whole") ==
        std::vector<std::string>{"e.g.x stays whole"});
}

TEST_CASE("token chunking") {
  std::vector<int> tokens(300);
  for (int i = 0; i < 300; ++i) tokens[i] = i;
  auto chunks = chunk_tokens(tokens, 128);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].size() == 128);
  CHECK(chunks[1].size() == 128);
  CHECK(chunks[2].size() == 44);
  // concatenation reproduces the input
  std::vector<int> flat;
  for (const auto& c : chunks) flat.insert(flat.end(), c.begin(), c.end());
  CHECK(flat == tokens);

  CHECK(chunk_tokens(std::vector<int>(128, 7), 128).size() == 1);
  CHECK(chunk_tokens({}, 128).empty());
}

TEST_CASE("vocabulary construction respects cutoff and tie-breaks") {
  Document d = make_doc("d1", "en", "Q1", {});
  d.sentences = {"a a b"};
  Vocabulary v = build_vocab({d}, 2);
  CHECK(v.size() == 4);  // reserved + "a"
  CHECK(v.id("a") == 3);
  CHECK(v.id("b") == 1);  // UNK

  d.sentences = {"zebra apple zebra mango"};
  Vocabulary v2 = build_vocab({d}, 1);
  CHECK(v2.id("zebra") == 3);  // most frequent first
  CHECK(v2.id("apple") == 4);  // then lexicographic
  CHECK(v2.id("mango") == 5);

  Vocabulary v3 = build_vocab({d}, 1);
  CHECK(v2.tokens() == v3.tokens());
}

TEST_CASE("tokenize prepends BOS and lowercases") {
  Document d = make_doc("d1", "en", "Q1", {});
  d.sentences = {"hello world"};
  Vocabulary v = build_vocab({d}, 1);
  CHECK(tokenize("hello world", v) ==
        std::vector<int>{2, v.id("hello"), v.id("world")});
  CHECK(tokenize("HELLO unseen", v) == std::vector<int>{2, v.id("hello"), 1});
  CHECK(tokenize("", v) == std::vector<int>{2});
}

TEST_CASE("vocabulary file round trip") {
  Document d = make_doc("d1", "en", "Q1", {});
  d.sentences = {"alpha beta gamma alpha"};
  Vocabulary v = build_vocab({d}, 1);
  const std::string path = temp_path("vocab.txt");
  save_vocab(v, path);
  Vocabulary back = load_vocab(path);
  CHECK(back.tokens() == v.tokens());
  CHECK(back.id("alpha") == v.id("alpha"));
}

TEST_CASE("mining the worked two-concept example") {
  // c1 paged in A and B; c3 paged only in A, sharing category X with c1's
  // A-page. The (c1_B, c1_A) direction has no B-language negative and drops.
  std::vector<Document> docs = {
      make_doc("c1_A", "A", "c1", {"X"}),
      make_doc("c1_B", "B", "c1", {"Y"}),
      make_doc("c3_A", "A", "c3", {"X"}),
  };
  MiningStats stats;
  auto triples = mine_triples(docs, {"A", "B"}, 1, &stats);
  REQUIRE(triples.size() == 1);
  CHECK(triples[0] == TrainingTriple{"c1_A", "c1_B", "c3_A"});
  CHECK(stats.pairs_total == 2);
  CHECK(stats.pairs_dropped_no_negative == 1);
}

TEST_CASE("single-language concepts contribute nothing") {
  std::vector<Document> docs = {make_doc("d1", "A", "c1", {"X"}),
                                make_doc("d2", "A", "c2", {"X"})};
  CHECK(mine_triples(docs, {"A", "B"}, 1).empty());
}

TEST_CASE("three-language concept yields six ordered pairs") {
  std::vector<Document> docs;
  for (const std::string& lang : {"A", "B", "C"}) {
    docs.push_back(make_doc("c1_" + lang, lang, "c1", {"X"}));
    docs.push_back(make_doc("c2_" + lang, lang, "c2", {"X"}));
  }
  auto triples = mine_triples(docs, {"A", "B", "C"}, 1);
  // c1 and c2 each give 6 ordered pairs, all with a unique eligible negative.
  CHECK(triples.size() == 12);
  for (const auto& t : triples) {
    CHECK(t.anchor_id.substr(0, 2) != t.negative_id.substr(0, 2));
    CHECK(t.anchor_id.substr(3) == t.negative_id.substr(3));  // same lang
  }
}

TEST_CASE("duplicate (concept, language) page is rejected") {
  std::vector<Document> docs = {make_doc("d1", "A", "c1", {"X"}),
                                make_doc("d2", "A", "c1", {"X"}),
                                make_doc("d3", "B", "c1", {"X"})};
  CHECK_THROWS_AS(mine_triples(docs, {"A", "B"}, 1), IntegrityError);
}

TEST_CASE("every mined triple satisfies the invariants on a synthetic corpus") {
  CorpusSpec spec;
  spec.languages = {"aa", "bb", "cc"};
  spec.num_concepts = 20;
  spec.num_categories = 4;
  spec.seed = 5;
  std::vector<Document> docs = generate_synthetic_corpus(spec);
  REQUIRE(docs.size() <= 500);

  auto triples = mine_triples(docs, spec.languages, 9);
  auto pairs = oracle_pairs(docs);
  CHECK(triples.size() == pairs.size());
  for (const auto& t : triples) {
    bool found = false;
    for (const auto& pr : pairs)
      if (pr.anchor == t.anchor_id && pr.positive == t.positive_id) {
        found = true;
        CHECK(pr.negatives.count(t.negative_id) == 1);
      }
    CHECK(found);
  }

  // same seed: identical output; different seed: same pairs, negatives may move
  CHECK(mine_triples(docs, spec.languages, 9) == triples);
  auto other = mine_triples(docs, spec.languages, 10);
  REQUIRE(other.size() == triples.size());
  for (size_t i = 0; i < other.size(); ++i) {
    CHECK(other[i].anchor_id == triples[i].anchor_id);
    CHECK(other[i].positive_id == triples[i].positive_id);
  }
}

TEST_CASE("downsampling") {
  std::vector<TrainingTriple> triples;
  for (int i = 0; i < 20; ++i)
    triples.push_back({"a" + std::to_string(i), "p", "n"});
  CHECK(downsample_triples(triples, 20, 1) == triples);
  CHECK(downsample_triples(triples, 0, 1).empty());
  auto s1 = downsample_triples(triples, 7, 42);
  auto s2 = downsample_triples(triples, 7, 42);
  CHECK(s1 == s2);
  CHECK(s1.size() == 7);
  CHECK_THROWS_AS(downsample_triples(triples, 21, 1), ParameterError);
}

TEST_CASE("triples file round trip") {
  std::vector<TrainingTriple> triples = {{"a1", "p1", "n1"}, {"a2", "p2", "n2"}};
  const std::string path = temp_path("triples.jsonl");
  save_triples(triples, path);
  CHECK(load_triples(path) == triples);
}

TEST_CASE("synthetic corpus is deterministic and respects vocabulary sharing") {
  CorpusSpec spec;
  spec.languages = {"aa", "bb"};
  spec.num_concepts = 10;
  spec.seed = 3;

  std::vector<Document> a = generate_synthetic_corpus(spec);
  std::vector<Document> b = generate_synthetic_corpus(spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].doc_id == b[i].doc_id);
    CHECK(a[i].sentences == b[i].sentences);
  }

  // every concept paged in both languages: at most 10 * 2 * 1 ordered pairs
  auto triples = mine_triples(a, spec.languages, 1);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& t : triples) pairs.insert({t.anchor_id, t.positive_id});
  CHECK(pairs.size() <= 20);

  // with no shared entities, per-language vocabularies are disjoint
  spec.shared_vocab_fraction = 0.0f;
  std::vector<Document> iso = generate_synthetic_corpus(spec);
  std::set<std::string> words_aa, words_bb;
  for (const Document& d : iso) {
    std::set<std::string>& dst = d.lang == "aa" ? words_aa : words_bb;
    for (const std::string& s : d.sentences) {
      size_t pos = 0;
      while (pos < s.size()) {
        size_t end = s.find(' ', pos);
        if (end == std::string::npos) end = s.size();
        if (end > pos) dst.insert(s.substr(pos, end - pos));
        pos = end + 1;
      }
    }
  }
  for (const std::string& w : words_aa) CHECK(words_bb.count(w) == 0);
}

TEST_CASE("invalid corpus specs are rejected") {
  CorpusSpec spec;
  spec.languages = {"aa"};  // needs at least two
  CHECK_THROWS_AS(generate_synthetic_corpus(spec), ParameterError);
  spec.languages = {"aa", "bb"};
  spec.shared_vocab_fraction = 1.5f;
  CHECK_THROWS_AS(generate_synthetic_corpus(spec), ParameterError);
}

TEST_CASE("segmentation modes") {
  Document d = make_doc("d1", "en", "Q1", {});
  d.sentences = {"alpha beta", "gamma"};
  Vocabulary v = build_vocab({d}, 1);

  SegmentedDocument bysent =
      segment_document(d, v, SegmentationMode::kSentence);
  REQUIRE(bysent.segments.size() == 2);
  CHECK(bysent.segments[0] ==
        std::vector<int>{2, v.id("alpha"), v.id("beta")});
  CHECK(bysent.segments[1] == std::vector<int>{2, v.id("gamma")});

  SegmentedDocument bychunk =
      segment_document(d, v, SegmentationMode::kChunk, 2);
  REQUIRE(bychunk.segments.size() == 2);
  // chunks of the flat word stream, BOS prepended after chunking
  CHECK(bychunk.segments[0] ==
        std::vector<int>{2, v.id("alpha"), v.id("beta")});
  CHECK(bychunk.segments[1] == std::vector<int>{2, v.id("gamma")});

  CHECK(flat_tokens(d, v) ==
        std::vector<int>{v.id("alpha"), v.id("beta"), v.id("gamma")});
}
