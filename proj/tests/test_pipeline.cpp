#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "hmde/errors.hpp"
#include "hmde/pipeline.hpp"

using namespace hmde;

namespace {

HmdeModel small_model(uint64_t seed = 7, int vocab = 30) {
  HmdeModel m;
  m.cfg.lower.hidden_size = 8;
  m.cfg.lower.num_layers = 1;
  m.cfg.lower.num_heads = 2;
  m.cfg.lower.ff_size = 16;
  m.cfg.lower.dropout = 0.0f;
  m.cfg.lower.max_positions = 128;
  m.cfg.lower.vocab_size = vocab;
  m.cfg.upper = m.cfg.lower;
  m.cfg.upper.vocab_size = 0;
  m.cfg.upper.max_positions = 33;
  m.init(seed);
  return m;
}

std::vector<int> sentence(std::initializer_list<int> ids) {
  std::vector<int> s = {kBosId};
  s.insert(s.end(), ids.begin(), ids.end());
  return s;
}

// A tiny triple set over distinct synthetic documents.
struct Toy {
  std::vector<SegmentedDocument> docs;
  std::vector<TrainingTriple> triples;
};

Toy make_toy(int num_triples) {
  Toy toy;
  std::mt19937_64 rng(99);
  for (int i = 0; i < num_triples; ++i) {
    for (const char* role : {"a", "p", "n"}) {
      SegmentedDocument d;
      d.doc_id = std::string(role) + std::to_string(i);
      int len = 2 + static_cast<int>(rng() % 4);
      std::vector<int> s = {kBosId};
      for (int t = 0; t < len; ++t) s.push_back(3 + static_cast<int>(rng() % 25));
      d.segments = {s};
      toy.docs.push_back(d);
    }
    toy.triples.push_back({"a" + std::to_string(i), "p" + std::to_string(i),
                           "n" + std::to_string(i)});
  }
  return toy;
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/hmde_test_") + name;
}

}  // namespace

TEST_CASE("optimizer step count follows accumulation arithmetic") {
  Toy toy = make_toy(256);
  HmdeModel m = small_model();
  m.cfg.lower.num_layers = 0;  // keep it fast; arithmetic is what matters
  m.cfg.upper.num_layers = 0;
  m.init(7);
  PretrainConfig cfg;
  cfg.batch_size = 2;
  cfg.grad_accumulation = 64;
  cfg.epochs = 1;
  PretrainResult r = pretrain(m, toy.triples, toy.docs, cfg);
  CHECK(r.optimizer_steps == 2);
  CHECK(r.loss_trace.size() == 2);

  // ceil semantics: 10 triples, N=2 -> 5 batches, accumulation 4 -> 2 steps
  Toy toy2 = make_toy(10);
  HmdeModel m2 = small_model();
  m2.cfg.lower.num_layers = 0;
  m2.cfg.upper.num_layers = 0;
  m2.init(7);
  PretrainConfig cfg2;
  cfg2.batch_size = 2;
  cfg2.grad_accumulation = 4;
  CHECK(pretrain(m2, toy2.triples, toy2.docs, cfg2).optimizer_steps == 2);
}

TEST_CASE("pretraining is bit-reproducible for a fixed seed") {
  Toy toy = make_toy(8);
  PretrainConfig cfg;
  cfg.batch_size = 2;
  cfg.grad_accumulation = 2;
  cfg.base_lr = 1e-3f;
  cfg.warmup_steps = 1;
  cfg.seed = 11;

  HmdeModel m1 = small_model(5);
  HmdeModel m2 = small_model(5);
  PretrainResult r1 = pretrain(m1, toy.triples, toy.docs, cfg);
  PretrainResult r2 = pretrain(m2, toy.triples, toy.docs, cfg);
  CHECK(r1.loss_trace == r2.loss_trace);
  std::vector<Tensor> p1 = m1.parameters(), p2 = m2.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].data() == p2[i].data());
}

TEST_CASE("pretraining moves parameters and rejects dangling ids") {
  Toy toy = make_toy(4);
  HmdeModel m = small_model(5);
  Tensor before = m.dbos_embedding.clone();
  PretrainConfig cfg;
  cfg.batch_size = 2;
  cfg.grad_accumulation = 1;
  cfg.base_lr = 1e-3f;
  cfg.warmup_steps = 1;
  pretrain(m, toy.triples, toy.docs, cfg);
  CHECK(m.dbos_embedding.data() != before.data());

  toy.triples.push_back({"missing", "p0", "n0"});
  HmdeModel m2 = small_model(5);
  CHECK_THROWS_AS(pretrain(m2, toy.triples, toy.docs, cfg), IntegrityError);
}

TEST_CASE("classification with a zero head is uniform") {
  HmdeModel m = small_model();
  ClassifierHead head;
  head.weight = Tensor::zeros({4, 8}, true);
  head.bias = Tensor::zeros({4}, true);
  SegmentedDocument doc{"d", {sentence({5, 6})}};
  std::vector<float> probs = classify(doc, m, head);
  REQUIRE(probs.size() == 4);
  for (float p : probs) CHECK(p == doctest::Approx(0.25));
}

TEST_CASE("a dominant bias wins regardless of the document") {
  HmdeModel m = small_model();
  ClassifierHead head;
  head.weight = Tensor::zeros({4, 8}, true);
  head.bias = Tensor::from_data({4}, {1000.0f, 0.0f, 0.0f, 0.0f}, true);
  SegmentedDocument doc{"d", {sentence({9, 10, 11})}};
  std::vector<float> probs = classify(doc, m, head);
  CHECK(probs[0] == doctest::Approx(1.0));
  CHECK(probs[1] == doctest::Approx(0.0));
}

TEST_CASE("classification probabilities sum to one") {
  HmdeModel m = small_model();
  ClassifierHead head;
  head.init(4, 8, 3);
  for (float& v : head.weight.data()) v *= 50.0f;  // spread the logits
  SegmentedDocument doc{"d", {sentence({5, 17, 6})}};
  std::vector<float> probs = classify(doc, m, head);
  double total = 0.0;
  for (float p : probs) total += p;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("early stopping worked example") {
  // losses [1.0, 0.9, 0.95, ..., 1.01], patience 7: best at epoch 2, the
  // seven following epochs never improve, so training stops after epoch 9.
  EarlyStopper stop(7);
  const double losses[] = {1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.00, 1.01};
  int stopped_after = 0;
  for (double loss : losses) {
    stop.observe(loss);
    if (stop.should_stop()) {
      stopped_after = stop.epochs_seen();
      break;
    }
  }
  CHECK(stopped_after == 9);
  CHECK(stop.best_epoch() == 2);
}

TEST_CASE("strictly decreasing losses never stop early") {
  EarlyStopper stop(7);
  for (int e = 0; e < 50; ++e) {
    stop.observe(1.0 - 0.01 * e);
    CHECK_FALSE(stop.should_stop());
  }
  CHECK(stop.best_epoch() == 50);
}

TEST_CASE("equal loss does not count as improvement") {
  EarlyStopper stop(2);
  CHECK(stop.observe(1.0));
  CHECK_FALSE(stop.observe(1.0));
  CHECK_FALSE(stop.observe(1.0));
  CHECK(stop.should_stop());
  CHECK(stop.best_epoch() == 1);
}

TEST_CASE("fine-tuning solves a linearly separable toy task") {
  // Two classes keyed by disjoint token groups; the lower encoder plus head
  // can separate them.
  HmdeModel m = small_model(3);
  std::mt19937_64 rng(17);
  std::vector<SegmentedDocument> train, val;
  std::vector<int> train_labels, val_labels;
  for (int i = 0; i < 20; ++i) {
    int label = i % 2;
    SegmentedDocument d;
    d.doc_id = "t" + std::to_string(i);
    std::vector<int> s = {kBosId};
    for (int t = 0; t < 5; ++t)
      s.push_back(label == 0 ? 3 + static_cast<int>(rng() % 5)
                             : 12 + static_cast<int>(rng() % 5));
    d.segments = {s};
    if (i < 16) {
      train.push_back(d);
      train_labels.push_back(label);
    } else {
      val.push_back(d);
      val_labels.push_back(label);
    }
  }
  ClassifierHead head;
  head.init(2, 8, 5);
  FinetuneConfig cfg;
  cfg.num_classes = 2;
  cfg.lr = 5e-3f;
  cfg.batch_size = 4;
  cfg.grad_accumulation = 1;
  cfg.max_epochs = 50;
  cfg.warmup_steps = 5;
  cfg.seed = 7;
  FinetuneResult r = finetune_classifier(m, head, train, train_labels, val,
                                         val_labels, cfg);
  CHECK(r.epochs_run >= 1);
  CHECK(r.best_epoch >= 1);
  CHECK(evaluate_accuracy(m, head, train, train_labels) == doctest::Approx(1.0));
}

TEST_CASE("fine-tuning rejects out-of-range labels") {
  HmdeModel m = small_model();
  ClassifierHead head;
  head.init(2, 8, 1);
  std::vector<SegmentedDocument> docs = {{"d", {sentence({5})}}};
  FinetuneConfig cfg;
  cfg.num_classes = 2;
  CHECK_THROWS_AS(
      finetune_classifier(m, head, docs, {2}, docs, {0}, cfg), ContractError);
}

TEST_CASE("accuracy tie-breaks to the lowest class index") {
  HmdeModel m = small_model();
  ClassifierHead head;
  head.weight = Tensor::zeros({4, 8}, true);
  head.bias = Tensor::zeros({4}, true);
  // zero head: every prediction is class 0 via the tie-break
  std::vector<SegmentedDocument> docs;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) {
    docs.push_back({"d" + std::to_string(i), {sentence({3 + i})}});
    labels.push_back(i % 4);  // balanced: class 0 is 25%
  }
  CHECK(evaluate_accuracy(m, head, docs, labels) == doctest::Approx(0.25));
  CHECK_THROWS_AS(evaluate_accuracy(m, head, {}, {}), ContractError);
}

TEST_CASE("accuracy matches a manual count with a known head") {
  HmdeModel m = small_model();
  ClassifierHead head;
  head.init(4, 8, 9);
  std::vector<SegmentedDocument> docs;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i)
    docs.push_back({"d" + std::to_string(i), {sentence({3 + i, 11 + i})}});
  int correct = 0;
  for (int i = 0; i < 8; ++i) {
    std::vector<float> probs = classify(docs[i], m, head);
    int arg = 0;
    for (int c = 1; c < 4; ++c)
      if (probs[c] > probs[arg]) arg = c;
    labels.push_back(i % 2 == 0 ? arg : (arg + 1) % 4);
    if (labels.back() == arg) ++correct;
  }
  CHECK(evaluate_accuracy(m, head, docs, labels) ==
        doctest::Approx(correct / 8.0));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  HmdeModel m = small_model(13);
  Vocabulary vocab;
  vocab.add("alpha");
  vocab.add("beta");
  ClassifierHead head;
  head.init(4, 8, 2);

  Checkpoint ckpt = make_checkpoint(m, vocab, &head);
  const std::string path = temp_path("ckpt.bin");
  save_checkpoint(path, ckpt);
  Checkpoint back = load_checkpoint(path);

  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == ckpt.tensors[i].first);
    CHECK(back.tensors[i].second.shape() == ckpt.tensors[i].second.shape());
    CHECK(back.tensors[i].second.data() == ckpt.tensors[i].second.data());
  }
  CHECK(back.config_json == ckpt.config_json);
  CHECK(back.vocab_text == ckpt.vocab_text);

  // restoring rebuilds an identical model
  HmdeModel m2 = small_model(99);
  Vocabulary vocab2;
  ClassifierHead head2;
  restore_checkpoint(back, m2, vocab2, &head2);
  std::vector<Tensor> p1 = m.parameters(), p2 = m2.parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].data() == p2[i].data());
  CHECK(vocab2.id("alpha") == vocab.id("alpha"));
  CHECK(head2.weight.data() == head.weight.data());
}

TEST_CASE("load then re-save is byte-identical") {
  HmdeModel m = small_model(13);
  Vocabulary vocab;
  vocab.add("tok");
  const std::string p1 = temp_path("ckpt_a.bin");
  const std::string p2 = temp_path("ckpt_b.bin");
  save_checkpoint(p1, make_checkpoint(m, vocab));
  save_checkpoint(p2, load_checkpoint(p1));
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)),
                 std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)),
                 std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK_FALSE(b1.empty());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bad = temp_path("bad_ckpt.bin");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE" << std::string(64, '\0');
  }
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);

  // truncation: cut a valid checkpoint in half
  HmdeModel m = small_model(13);
  Vocabulary vocab;
  const std::string good = temp_path("good_ckpt.bin");
  save_checkpoint(good, make_checkpoint(m, vocab));
  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const std::string cut = temp_path("cut_ckpt.bin");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(cut), FormatError);
}
