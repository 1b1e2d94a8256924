#include <doctest.h>

#include <random>

#include "hmde/errors.hpp"
#include "hmde/model.hpp"
#include "hmde/optim.hpp"
#include "testutil.hpp"

using namespace hmde;

namespace {

HmdeModel small_model(int upper_layers = 1, uint64_t seed = 7) {
  HmdeModel m;
  m.cfg.lower.hidden_size = 8;
  m.cfg.lower.num_layers = 1;
  m.cfg.lower.num_heads = 2;
  m.cfg.lower.ff_size = 16;
  m.cfg.lower.dropout = 0.0f;
  m.cfg.lower.max_positions = 128;
  m.cfg.lower.vocab_size = 20;
  m.cfg.upper = m.cfg.lower;
  m.cfg.upper.vocab_size = 0;
  m.cfg.upper.num_layers = upper_layers;
  m.cfg.upper.max_positions = 33;
  m.init(seed);
  return m;
}

std::vector<int> sentence(std::initializer_list<int> ids) {
  std::vector<int> s = {kBosId};
  s.insert(s.end(), ids.begin(), ids.end());
  return s;
}

// Randomize lower output projections so the encoder is not an identity map.
void desaturate(HmdeModel& m) {
  std::mt19937_64 rng(123);
  for (auto& layer : m.lower.layers) {
    for (float& v : layer.wo.data()) v = 0.1f * ((rng() % 200) / 100.0f - 1.0f);
    for (float& v : layer.w2.data()) v = 0.1f * ((rng() % 200) / 100.0f - 1.0f);
  }
  for (auto& layer : m.upper.layers) {
    for (float& v : layer.wo.data()) v = 0.1f * ((rng() % 200) / 100.0f - 1.0f);
    for (float& v : layer.w2.data()) v = 0.1f * ((rng() % 200) / 100.0f - 1.0f);
  }
}

}  // namespace

TEST_CASE("sentence batch shape and empty rejection") {
  HmdeModel m = small_model();
  Tensor e = encode_sentence_batch({sentence({5, 6})}, m);
  CHECK(e.shape() == std::vector<int>{1, 8});
  CHECK_THROWS_AS(encode_sentence_batch({}, m), ContractError);
}

TEST_CASE("padding to batch width does not change a sentence's embedding") {
  HmdeModel m = small_model();
  desaturate(m);
  std::vector<int> s1 = sentence({5, 6});
  std::vector<int> s2 = sentence({7, 8, 9, 10, 11, 12});
  Tensor alone = encode_sentence_batch({s1}, m);
  Tensor batched = encode_sentence_batch({s1, s2}, m);
  for (int c = 0; c < 8; ++c)
    CHECK(batched.data()[c] == alone.data()[c]);  // bit-identical
}

TEST_CASE("sentences are truncated to 128 tokens including BOS") {
  HmdeModel m = small_model();
  desaturate(m);
  std::vector<int> long_s = {kBosId};
  for (int i = 0; i < 250; ++i) long_s.push_back(3 + i % 15);
  std::vector<int> exact(long_s.begin(), long_s.begin() + 128);
  Tensor a = encode_sentence_batch({long_s}, m);
  Tensor b = encode_sentence_batch({exact}, m);
  CHECK(a.data() == b.data());
}

TEST_CASE("identity upper, single sentence: document equals sentence") {
  HmdeModel m = small_model(/*upper_layers=*/0);
  desaturate(m);
  std::vector<int> s = sentence({4, 9, 3});
  SegmentedDocument doc{"d1", {s}};
  EncodedDocument enc = encode_document(doc, m);
  Tensor ref = encode_sentence_batch({s}, m);
  CHECK(enc.num_sentences_used == 1);
  for (int c = 0; c < 8; ++c)
    CHECK(enc.embedding.data()[c] == doctest::Approx(ref.data()[c]).epsilon(1e-6));
}

TEST_CASE("identity upper: document is the mean of sentence embeddings") {
  HmdeModel m = small_model(0);
  desaturate(m);
  std::vector<std::vector<int>> ss = {sentence({4, 9}), sentence({3}),
                                      sentence({12, 13, 14})};
  Tensor batch = encode_sentence_batch(ss, m);
  EncodedDocument enc = encode_document({"d", ss}, m);
  for (int c = 0; c < 8; ++c) {
    double mean = 0.0;
    for (int r = 0; r < 3; ++r) mean += batch.data()[r * 8 + c];
    mean /= 3.0;
    CHECK(enc.embedding.data()[c] == doctest::Approx(mean).epsilon(1e-6));
  }
}

TEST_CASE("documents keep only the first 32 sentences") {
  HmdeModel m = small_model();
  SegmentedDocument doc{"d", {}};
  for (int i = 0; i < 40; ++i) doc.segments.push_back(sentence({3 + i % 10}));
  EncodedDocument enc = encode_document(doc, m);
  CHECK(enc.num_sentences_used == 32);

  SegmentedDocument head{"d", {doc.segments.begin(), doc.segments.begin() + 32}};
  CHECK(encode_document(head, m).embedding.data() == enc.embedding.data());
}

TEST_CASE("empty document is rejected") {
  HmdeModel m = small_model();
  CHECK_THROWS_AS(encode_document({"d", {}}, m), ContractError);
}

TEST_CASE("encode_query matches a single-sentence batch") {
  HmdeModel m = small_model();
  desaturate(m);
  std::vector<int> q = sentence({5, 17, 6});
  Tensor qe = encode_query(q, m);
  Tensor be = encode_sentence_batch({q}, m);
  CHECK(qe.shape() == std::vector<int>{8});
  CHECK(qe.data() == be.data());
  CHECK_THROWS_AS(encode_query({}, m), ContractError);
}

TEST_CASE("one-sentence identity-upper document equals the query embedding") {
  HmdeModel m = small_model(0);
  desaturate(m);
  std::vector<int> s = sentence({7, 7, 8});
  EncodedDocument enc = encode_document({"d", {s}}, m);
  Tensor qe = encode_query(s, m);
  for (int c = 0; c < 8; ++c)
    CHECK(enc.embedding.data()[c] == doctest::Approx(qe.data()[c]).epsilon(1e-6));
}

TEST_CASE("overlong queries are head-truncated before encoding") {
  HmdeModel m = small_model();
  desaturate(m);
  std::vector<int> q = {kBosId};
  for (int i = 0; i < 200; ++i) q.push_back(3 + i % 12);
  std::vector<int> head(q.begin(), q.begin() + 128);
  CHECK(encode_query(q, m).data() == encode_query(head, m).data());
}

TEST_CASE("freezing the lower transformer pins its parameters") {
  HmdeModel m = small_model();
  desaturate(m);
  m.training = true;
  set_lower_frozen(m, true);

  std::vector<std::vector<float>> lower_before;
  for (const Tensor& t : m.lower.parameters()) lower_before.push_back(t.data());
  Tensor upper_wq_before = m.upper.layers[0].wq.clone();

  AdamW opt(m.parameters(/*trainable_only=*/true), {});
  SegmentedDocument doc{"d", {sentence({4, 5}), sentence({6})}};
  for (int step = 0; step < 10; ++step) {
    opt.zero_grad();
    Tape tape;
    EncodedDocument enc = encode_document(doc, m);
    tape.backward(sum(mul(enc.embedding, enc.embedding)));
    opt.step(0.01f);
  }
  std::vector<Tensor> lower_after = m.lower.parameters();
  for (size_t i = 0; i < lower_after.size(); ++i)
    CHECK(lower_after[i].data() == lower_before[i]);  // bit-identical
  CHECK(m.upper.layers[0].wq.data() != upper_wq_before.data());

  // Unfreezing restores training of the lower stack.
  set_lower_frozen(m, false);
  AdamW opt2(m.parameters(true), {});
  opt2.zero_grad();
  {
    Tape tape;
    EncodedDocument enc = encode_document(doc, m);
    tape.backward(sum(mul(enc.embedding, enc.embedding)));
  }
  opt2.step(0.01f);
  bool lower_moved = false;
  for (size_t i = 0; i < lower_after.size(); ++i)
    if (lower_after[i].data() != lower_before[i]) lower_moved = true;
  CHECK(lower_moved);
}

TEST_CASE("evaluation-mode encoding is deterministic") {
  HmdeModel m = small_model();
  desaturate(m);
  m.training = false;
  SegmentedDocument doc{"d", {sentence({4, 5, 6}), sentence({9})}};
  Tensor a = encode_document(doc, m).embedding;
  Tensor b = encode_document(doc, m).embedding;
  CHECK(a.data() == b.data());
}

TEST_CASE("identity upper is permutation-invariant over sentences") {
  HmdeModel m = small_model(0);
  desaturate(m);
  std::vector<std::vector<int>> ss = {sentence({4}), sentence({5, 6}),
                                      sentence({7, 8, 9})};
  Tensor a = encode_document({"d", ss}, m).embedding;
  std::swap(ss[0], ss[2]);
  Tensor b = encode_document({"d", ss}, m).embedding;
  for (int c = 0; c < 8; ++c)
    CHECK(a.data()[c] == doctest::Approx(b.data()[c]).epsilon(1e-6));
}

TEST_CASE("scaling sentence embeddings scales the identity-upper document") {
  // Verified at the upper level directly: the 0-layer upper mean is linear.
  HmdeModel m = small_model(0);
  std::mt19937_64 rng(31);
  std::vector<std::vector<int>> ss = {sentence({4}), sentence({5, 6})};
  Tensor batch = encode_sentence_batch(ss, m);
  EncodedDocument enc = encode_document({"d", ss}, m);
  // mean of rows == embedding (identity upper), so scaling rows by c scales
  // the mean by c; check the arithmetic identity holds for the mean itself.
  const float c = 3.5f;
  for (int col = 0; col < 8; ++col) {
    double mean = 0.0;
    for (int r = 0; r < 2; ++r) mean += batch.data()[r * 8 + col];
    mean /= 2.0;
    CHECK(c * enc.embedding.data()[col] == doctest::Approx(c * mean).epsilon(1e-6));
  }
}

TEST_CASE("mismatched lower and upper widths are rejected") {
  HmdeModel m;
  m.cfg.lower.hidden_size = 8;
  m.cfg.lower.num_heads = 2;
  m.cfg.lower.vocab_size = 10;
  m.cfg.upper.hidden_size = 16;
  m.cfg.upper.num_heads = 2;
  m.cfg.upper.vocab_size = 0;
  CHECK_THROWS_AS(m.init(1), ParameterError);
}
