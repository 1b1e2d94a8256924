#include "hmde/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>

#include "hmde/errors.hpp"
#include "hmde/objective.hpp"

namespace hmde {

using nlohmann::json;

namespace {

void seeded_shuffle(std::vector<size_t>& idx, uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i + 1 < idx.size(); ++i) {
    const size_t j = i + rng() % (idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
}

Tensor as_row(const Tensor& vec) { return reshape(vec, {1, int(vec.size())}); }

// snapshot/restore of raw parameter payloads, for best-epoch retention
std::vector<std::vector<float>> snapshot_params(const std::vector<Tensor>& ps) {
  std::vector<std::vector<float>> out;
  out.reserve(ps.size());
  for (const Tensor& p : ps) out.push_back(p.data());
  return out;
}

void restore_params(std::vector<Tensor>& ps,
                    const std::vector<std::vector<float>>& snap) {
  for (size_t i = 0; i < ps.size(); ++i) ps[i].data() = snap[i];
}

// Parameters a forward pass never touched (the upper positional table under a
// zero-layer upper, say) still take the weight-decay part of the step; give
// them explicit zero gradients so the optimizer contract holds.
void ensure_grads(std::vector<Tensor>& ps) {
  for (Tensor& t : ps) t.grad();
}

}  // namespace

// ---- pretraining -------------------------------------------------------------

PretrainResult pretrain(HmdeModel& model,
                        const std::vector<TrainingTriple>& triples,
                        const std::vector<SegmentedDocument>& documents,
                        const PretrainConfig& cfg) {
  if (triples.empty()) throw ContractError("pretrain with no triples");
  if (cfg.batch_size < 1 || cfg.grad_accumulation < 1 || cfg.epochs < 1)
    throw ParameterError("pretrain config sizes must be >= 1");

  std::unordered_map<std::string, const SegmentedDocument*> by_id;
  for (const SegmentedDocument& d : documents) by_id[d.doc_id] = &d;
  for (const TrainingTriple& t : triples)
    for (const std::string* id : {&t.anchor_id, &t.positive_id, &t.negative_id})
      if (!by_id.count(*id))
        throw IntegrityError("triple references unknown doc_id '" + *id + "'");

  const int64_t batches_per_epoch =
      (int64_t(triples.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t steps_per_epoch =
      (batches_per_epoch + cfg.grad_accumulation - 1) / cfg.grad_accumulation;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  LrSchedule sched{cfg.base_lr,
                   std::max<int64_t>(1, std::min<int64_t>(cfg.warmup_steps,
                                                          total_steps)),
                   total_steps};

  AdamWConfig opt_cfg;
  opt_cfg.beta1 = cfg.beta1;
  opt_cfg.beta2 = cfg.beta2;
  opt_cfg.weight_decay = cfg.weight_decay;
  std::vector<Tensor> params = model.parameters(/*trainable_only=*/true);
  AdamW optimizer(params, opt_cfg);

  model.training = true;
  PretrainResult result;
  int64_t opt_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order(triples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, cfg.seed + 0x9e3779b9u * uint64_t(epoch + 1));

    int pending = 0;
    double step_loss = 0.0;  // summed over the batches folded into one step
    for (size_t start = 0; start < order.size();
         start += size_t(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), start + size_t(cfg.batch_size));
      Tape tape;
      std::vector<Tensor> a_rows, p_rows, n_rows;
      for (size_t k = start; k < end; ++k) {
        const TrainingTriple& t = triples[order[k]];
        a_rows.push_back(as_row(encode_document(*by_id[t.anchor_id], model).embedding));
        p_rows.push_back(as_row(encode_document(*by_id[t.positive_id], model).embedding));
        n_rows.push_back(as_row(encode_document(*by_id[t.negative_id], model).embedding));
      }
      ContrastiveBatch batch{concat_rows(a_rows), concat_rows(p_rows),
                             concat_rows(n_rows), cfg.temperature};
      Tensor loss = contrastive_loss(batch);
      step_loss += loss.item();
      tape.backward(loss);
      if (++pending == cfg.grad_accumulation) {
        ensure_grads(params);
        optimizer.step(lr_at_step(sched, ++opt_step));
        optimizer.zero_grad();
        result.loss_trace.push_back(step_loss);
        step_loss = 0.0;
        pending = 0;
      }
    }
    if (pending > 0) {  // end-of-epoch flush
      ensure_grads(params);
      optimizer.step(lr_at_step(sched, ++opt_step));
      optimizer.zero_grad();
      result.loss_trace.push_back(step_loss);
    }
  }
  model.training = false;
  result.optimizer_steps = static_cast<int>(opt_step);
  return result;
}

// ---- classification ------------------------------------------------------------

void ClassifierHead::init(int num_classes, int hidden_size, uint64_t seed) {
  if (num_classes < 2) throw ParameterError("classifier needs >= 2 classes");
  std::mt19937_64 rng(seed);
  weight = init_normal({num_classes, hidden_size}, rng);
  bias = Tensor::zeros({num_classes}, /*requires_grad=*/true);
}

namespace {

Tensor head_logits(const Tensor& doc_embedding, const ClassifierHead& head) {
  const int c = head.weight.dim(0);
  Tensor col = matmul(head.weight, reshape(doc_embedding, {int(doc_embedding.size()), 1}));
  return add(reshape(col, {1, c}), reshape(head.bias, {1, c}));
}

}  // namespace

std::vector<float> classify(const SegmentedDocument& doc, HmdeModel& model,
                            const ClassifierHead& head) {
  if (head.weight.dim(1) != model.cfg.lower.hidden_size)
    throw ContractError("classifier head width does not match model");
  const bool was_training = model.training;
  model.training = false;
  Tensor probs = softmax(head_logits(encode_document(doc, model).embedding, head));
  model.training = was_training;
  return probs.data();
}

// ---- early stopping --------------------------------------------------------------

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  if (patience < 1) throw ParameterError("patience must be >= 1");
  best_ = std::numeric_limits<double>::infinity();
}

bool EarlyStopper::observe(double val_loss) {
  ++epoch_;
  if (val_loss < best_) {  // strictly lower; equal is not improvement
    best_ = val_loss;
    best_epoch_ = epoch_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

// ---- fine-tuning -----------------------------------------------------------------

namespace {

double validation_loss(HmdeModel& model, const ClassifierHead& head,
                       const std::vector<SegmentedDocument>& docs,
                       const std::vector<int>& labels) {
  const bool was_training = model.training;
  model.training = false;
  double total = 0.0;
  for (size_t i = 0; i < docs.size(); ++i) {
    Tensor logits = head_logits(encode_document(docs[i], model).embedding, head);
    total += cross_entropy_loss(logits, {labels[i]}).item();
  }
  model.training = was_training;
  return total / double(docs.size());
}

}  // namespace

FinetuneResult finetune_classifier(HmdeModel& model, ClassifierHead& head,
                                   const std::vector<SegmentedDocument>& train_docs,
                                   const std::vector<int>& train_labels,
                                   const std::vector<SegmentedDocument>& val_docs,
                                   const std::vector<int>& val_labels,
                                   const FinetuneConfig& cfg) {
  if (train_docs.empty() || val_docs.empty())
    throw ContractError("fine-tuning needs non-empty train and validation sets");
  if (train_docs.size() != train_labels.size() ||
      val_docs.size() != val_labels.size())
    throw ContractError("label count does not match document count");
  for (int l : train_labels)
    if (l < 0 || l >= cfg.num_classes)
      throw ContractError("train label out of range");
  for (int l : val_labels)
    if (l < 0 || l >= cfg.num_classes)
      throw ContractError("validation label out of range");

  set_lower_frozen(model, false);  // always updated in fine-tuning

  std::vector<Tensor> params = model.parameters();
  params.push_back(head.weight);
  params.push_back(head.bias);
  AdamWConfig opt_cfg;
  opt_cfg.weight_decay = 0.0f;  // fine-tuning runs without weight decay
  AdamW optimizer(params, opt_cfg);

  const int64_t batches_per_epoch =
      (int64_t(train_docs.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t steps_per_epoch =
      (batches_per_epoch + cfg.grad_accumulation - 1) / cfg.grad_accumulation;
  const int64_t total_steps = steps_per_epoch * cfg.max_epochs;
  LrSchedule sched{cfg.lr,
                   std::max<int64_t>(1, std::min<int64_t>(cfg.warmup_steps,
                                                          total_steps)),
                   total_steps};

  EarlyStopper stopper(cfg.patience);
  FinetuneResult result;
  std::vector<std::vector<float>> best = snapshot_params(params);
  int64_t opt_step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    model.training = true;
    std::vector<size_t> order(train_docs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    seeded_shuffle(order, cfg.seed + 0x85ebca6bu * uint64_t(epoch));

    int pending = 0;
    for (size_t start = 0; start < order.size();
         start += size_t(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      Tape tape;
      std::vector<Tensor> rows;
      std::vector<int> labels;
      for (size_t k = start; k < end; ++k) {
        rows.push_back(head_logits(
            encode_document(train_docs[order[k]], model).embedding, head));
        labels.push_back(train_labels[order[k]]);
      }
      Tensor loss = cross_entropy_loss(concat_rows(rows), labels);
      tape.backward(loss);
      if (++pending == cfg.grad_accumulation) {
        ensure_grads(params);
        optimizer.step(lr_at_step(sched, ++opt_step));
        optimizer.zero_grad();
        pending = 0;
      }
    }
    if (pending > 0) {
      ensure_grads(params);
      optimizer.step(lr_at_step(sched, ++opt_step));
      optimizer.zero_grad();
    }
    model.training = false;

    const double val = validation_loss(model, head, val_docs, val_labels);
    result.val_losses.push_back(val);
    if (stopper.observe(val)) best = snapshot_params(params);
    if (stopper.should_stop()) break;
  }

  restore_params(params, best);
  result.best_epoch = stopper.best_epoch();
  result.epochs_run = stopper.epochs_seen();
  return result;
}

double evaluate_accuracy(HmdeModel& model, const ClassifierHead& head,
                         const std::vector<SegmentedDocument>& docs,
                         const std::vector<int>& labels) {
  if (docs.empty()) throw ContractError("evaluate_accuracy on an empty set");
  if (docs.size() != labels.size())
    throw ContractError("label count does not match document count");
  int correct = 0;
  for (size_t i = 0; i < docs.size(); ++i) {
    const std::vector<float> probs = classify(docs[i], model, head);
    int arg = 0;
    for (int c = 1; c < static_cast<int>(probs.size()); ++c)
      if (probs[c] > probs[arg]) arg = c;  // ties keep the lowest index
    if (arg == labels[i]) ++correct;
  }
  return double(correct) / double(docs.size());
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

void append_transformer(const std::string& prefix, const Transformer& tf,
                        std::vector<std::pair<std::string, Tensor>>& out) {
  if (tf.token_embedding.defined())
    out.emplace_back(prefix + ".token_embedding", tf.token_embedding);
  out.emplace_back(prefix + ".position_embedding", tf.position_embedding);
  for (size_t i = 0; i < tf.layers.size(); ++i) {
    const auto& l = tf.layers[i];
    const std::string lp = prefix + ".layer" + std::to_string(i) + ".";
    const std::pair<const char*, const Tensor*> named[] = {
        {"ln1_gamma", &l.ln1_gamma}, {"ln1_beta", &l.ln1_beta},
        {"wq", &l.wq}, {"bq", &l.bq}, {"wk", &l.wk}, {"bk", &l.bk},
        {"wv", &l.wv}, {"bv", &l.bv}, {"wo", &l.wo}, {"bo", &l.bo},
        {"ln2_gamma", &l.ln2_gamma}, {"ln2_beta", &l.ln2_beta},
        {"w1", &l.w1}, {"b1", &l.b1}, {"w2", &l.w2}, {"b2", &l.b2}};
    for (const auto& [name, t] : named) out.emplace_back(lp + name, *t);
  }
}

json transformer_config_json(const TransformerConfig& c) {
  return json{{"hidden_size", c.hidden_size}, {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},     {"ff_size", c.ff_size},
              {"dropout", c.dropout},         {"max_positions", c.max_positions},
              {"layer_norm_eps", c.layer_norm_eps},
              {"vocab_size", c.vocab_size}};
}

TransformerConfig transformer_config_from_json(const json& j) {
  TransformerConfig c;
  c.hidden_size = j.at("hidden_size").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_size = j.at("ff_size").get<int>();
  c.dropout = j.at("dropout").get<float>();
  c.max_positions = j.at("max_positions").get<int>();
  c.layer_norm_eps = j.at("layer_norm_eps").get<float>();
  c.vocab_size = j.at("vocab_size").get<int>();
  return c;
}

constexpr char kMagic[4] = {'H', 'M', 'D', 'E'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint file");
  return value;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> named_parameters(
    const HmdeModel& model, const ClassifierHead* head) {
  std::vector<std::pair<std::string, Tensor>> out;
  append_transformer("lower", model.lower, out);
  append_transformer("upper", model.upper, out);
  out.emplace_back("dbos", model.dbos_embedding);
  if (head) {
    out.emplace_back("head.weight", head->weight);
    out.emplace_back("head.bias", head->bias);
  }
  return out;
}

Checkpoint make_checkpoint(const HmdeModel& model, const Vocabulary& vocab,
                           const ClassifierHead* head) {
  Checkpoint ckpt;
  ckpt.tensors = named_parameters(model, head);
  json cfg;
  cfg["lower"] = transformer_config_json(model.cfg.lower);
  cfg["upper"] = transformer_config_json(model.cfg.upper);
  cfg["max_sentence_tokens"] = model.cfg.max_sentence_tokens;
  cfg["max_sentences"] = model.cfg.max_sentences;
  cfg["temperature"] = model.cfg.temperature;
  cfg["num_classes"] = head ? head->weight.dim(0) : 0;
  ckpt.config_json = cfg.dump();
  std::string vocab_text;
  for (int i = 3; i < vocab.size(); ++i) vocab_text += vocab.token(i) + "\n";
  ckpt.vocab_text = std::move(vocab_text);
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  write_pod<uint32_t>(out, ckpt.version);
  write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_pod<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int d : t.shape()) write_pod<uint64_t>(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.config_json.size()));
  out.write(ckpt.config_json.data(),
            static_cast<std::streamsize>(ckpt.config_json.size()));
  write_pod<uint32_t>(out, static_cast<uint32_t>(ckpt.vocab_text.size()));
  out.write(ckpt.vocab_text.data(),
            static_cast<std::streamsize>(ckpt.vocab_text.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  Checkpoint ckpt;
  ckpt.version = read_pod<uint32_t>(in);
  if (ckpt.version != 1)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(ckpt.version));
  const uint32_t count = read_pod<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = read_pod<uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("truncated checkpoint file");
    const uint8_t rank = read_pod<uint8_t>(in);
    std::vector<int> shape;
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint64_t dim = read_pod<uint64_t>(in);
      shape.push_back(static_cast<int>(dim));
      n *= static_cast<int64_t>(dim);
    }
    std::vector<float> data(n);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw FormatError("truncated checkpoint file");
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
  }
  const uint32_t cfg_len = read_pod<uint32_t>(in);
  ckpt.config_json.resize(cfg_len);
  in.read(ckpt.config_json.data(), cfg_len);
  const uint32_t vocab_len = read_pod<uint32_t>(in);
  ckpt.vocab_text.resize(vocab_len);
  in.read(ckpt.vocab_text.data(), vocab_len);
  if (!in) throw FormatError("truncated checkpoint file");
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, HmdeModel& model,
                        Vocabulary& vocab, ClassifierHead* head) {
  json cfg;
  try {
    cfg = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }
  HmdeConfig mc;
  mc.lower = transformer_config_from_json(cfg.at("lower"));
  mc.upper = transformer_config_from_json(cfg.at("upper"));
  mc.max_sentence_tokens = cfg.at("max_sentence_tokens").get<int>();
  mc.max_sentences = cfg.at("max_sentences").get<int>();
  mc.temperature = cfg.at("temperature").get<float>();
  model.cfg = mc;
  model.init(0);

  const int num_classes = cfg.at("num_classes").get<int>();
  if (head && num_classes > 0)
    head->init(num_classes, mc.lower.hidden_size, 0);

  auto params = named_parameters(model, num_classes > 0 ? head : nullptr);
  if (params.size() != ckpt.tensors.size())
    throw FormatError("checkpoint tensor count does not match model");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, src] = ckpt.tensors[i];
    auto& [expect, dst] = params[i];
    if (name != expect || src.shape() != dst.shape())
      throw FormatError("checkpoint tensor '" + name +
                        "' does not match expected '" + expect + "'");
    dst.data() = src.data();
  }

  vocab = Vocabulary();
  std::istringstream vs(ckpt.vocab_text);
  std::string line;
  while (std::getline(vs, line))
    if (!line.empty()) vocab.add(line);
}

}  // namespace hmde
