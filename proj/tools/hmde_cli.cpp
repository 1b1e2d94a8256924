// Command-line front end: synthetic corpus generation, triple mining,
// contrastive pretraining, classifier fine-tuning, and the two evaluations,
// all driven by a JSON config plus a handful of overrides.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "hmde/corpus.hpp"
#include "hmde/errors.hpp"
#include "hmde/pipeline.hpp"
#include "hmde/retrieval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hmde;

namespace {

// ---- config -----------------------------------------------------------------

struct RunConfig {
  uint64_t seed = 42;
  HmdeConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  struct Data {
    std::string dump, triples, checkpoint;
    std::string labeled_train, labeled_val, labeled_test;
    std::string queries, qrels;
    int min_frequency = 1;
    std::string segmentation = "sentence";
    CorpusSpec synthesis;
  } data;
  struct Eval {
    int segment_len = 128;
    int truncate_limit = 128;
    size_t top_k = 0;
    std::string collection_lang;
  } eval;

  json resolved;  // fully-resolved snapshot used for hashing
};

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ParameterError("unknown config key '" + where + it.key() + "'");
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig default_config() {
  RunConfig c;
  // lower transformer (word-level stand-in for the pretrained sentence encoder)
  c.model.lower = TransformerConfig{64, 2, 4, 256, 0.1f, 128, 1e-12f, 0};
  // upper (document-level) transformer
  c.model.upper = TransformerConfig{64, 2, 4, 2048, 0.1f, 33, 1e-12f, 0};
  c.model.max_sentence_tokens = 128;
  c.model.max_sentences = 32;
  c.model.temperature = 0.1f;
  c.data.synthesis.languages = {"l1", "l2"};
  return c;
}

void parse_transformer(const json& j, TransformerConfig& c,
                       const std::string& where) {
  check_keys(j,
             {"num_layers", "num_heads", "ff_size", "dropout", "max_positions",
              "layer_norm_eps"},
             where);
  maybe(j, "num_layers", c.num_layers);
  maybe(j, "num_heads", c.num_heads);
  maybe(j, "ff_size", c.ff_size);
  maybe(j, "dropout", c.dropout);
  maybe(j, "max_positions", c.max_positions);
  maybe(j, "layer_norm_eps", c.layer_norm_eps);
}

RunConfig load_config(const std::string& path) {
  RunConfig c = default_config();
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError("config parse error: " + std::string(e.what()));
    }
  }
  check_keys(j, {"seed", "model", "pretrain", "finetune", "data", "eval"}, "");
  maybe(j, "seed", c.seed);
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m,
               {"hidden_size", "lower", "upper", "max_sentence_tokens",
                "max_sentences", "temperature"},
               "model.");
    int hidden = c.model.lower.hidden_size;
    maybe(m, "hidden_size", hidden);
    c.model.lower.hidden_size = c.model.upper.hidden_size = hidden;
    if (m.contains("lower")) parse_transformer(m["lower"], c.model.lower, "model.lower.");
    if (m.contains("upper")) parse_transformer(m["upper"], c.model.upper, "model.upper.");
    maybe(m, "max_sentence_tokens", c.model.max_sentence_tokens);
    maybe(m, "max_sentences", c.model.max_sentences);
    maybe(m, "temperature", c.model.temperature);
  }
  c.model.lower.max_positions =
      std::max(c.model.lower.max_positions, c.model.max_sentence_tokens);
  c.model.upper.max_positions =
      std::max(c.model.upper.max_positions, c.model.max_sentences + 1);
  if (j.contains("pretrain")) {
    const json& p = j["pretrain"];
    check_keys(p,
               {"batch_size", "grad_accumulation", "epochs", "base_lr",
                "warmup_steps", "weight_decay", "beta1", "beta2"},
               "pretrain.");
    maybe(p, "batch_size", c.pretrain.batch_size);
    maybe(p, "grad_accumulation", c.pretrain.grad_accumulation);
    maybe(p, "epochs", c.pretrain.epochs);
    maybe(p, "base_lr", c.pretrain.base_lr);
    maybe(p, "warmup_steps", c.pretrain.warmup_steps);
    maybe(p, "weight_decay", c.pretrain.weight_decay);
    maybe(p, "beta1", c.pretrain.beta1);
    maybe(p, "beta2", c.pretrain.beta2);
  }
  if (j.contains("finetune")) {
    const json& f = j["finetune"];
    check_keys(f,
               {"lr", "batch_size", "grad_accumulation", "max_epochs",
                "warmup_steps", "patience", "num_classes"},
               "finetune.");
    maybe(f, "lr", c.finetune.lr);
    maybe(f, "batch_size", c.finetune.batch_size);
    maybe(f, "grad_accumulation", c.finetune.grad_accumulation);
    maybe(f, "max_epochs", c.finetune.max_epochs);
    maybe(f, "warmup_steps", c.finetune.warmup_steps);
    maybe(f, "patience", c.finetune.patience);
    maybe(f, "num_classes", c.finetune.num_classes);
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d,
               {"dump", "triples", "checkpoint", "labeled_train", "labeled_val",
                "labeled_test", "queries", "qrels", "min_frequency",
                "segmentation", "synthesis"},
               "data.");
    maybe(d, "dump", c.data.dump);
    maybe(d, "triples", c.data.triples);
    maybe(d, "checkpoint", c.data.checkpoint);
    maybe(d, "labeled_train", c.data.labeled_train);
    maybe(d, "labeled_val", c.data.labeled_val);
    maybe(d, "labeled_test", c.data.labeled_test);
    maybe(d, "queries", c.data.queries);
    maybe(d, "qrels", c.data.qrels);
    maybe(d, "min_frequency", c.data.min_frequency);
    maybe(d, "segmentation", c.data.segmentation);
    if (d.contains("synthesis")) {
      const json& s = d["synthesis"];
      check_keys(s,
                 {"languages", "num_concepts", "min_pages_per_concept",
                  "max_pages_per_concept", "num_categories",
                  "min_sentences_per_doc", "max_sentences_per_doc",
                  "shared_vocab_fraction"},
                 "data.synthesis.");
      maybe(s, "languages", c.data.synthesis.languages);
      maybe(s, "num_concepts", c.data.synthesis.num_concepts);
      maybe(s, "min_pages_per_concept", c.data.synthesis.min_pages_per_concept);
      maybe(s, "max_pages_per_concept", c.data.synthesis.max_pages_per_concept);
      maybe(s, "num_categories", c.data.synthesis.num_categories);
      maybe(s, "min_sentences_per_doc", c.data.synthesis.min_sentences_per_doc);
      maybe(s, "max_sentences_per_doc", c.data.synthesis.max_sentences_per_doc);
      maybe(s, "shared_vocab_fraction", c.data.synthesis.shared_vocab_fraction);
    }
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, {"segment_len", "truncate_limit", "top_k", "collection_lang"},
               "eval.");
    maybe(e, "segment_len", c.eval.segment_len);
    maybe(e, "truncate_limit", c.eval.truncate_limit);
    maybe(e, "top_k", c.eval.top_k);
    maybe(e, "collection_lang", c.eval.collection_lang);
  }
  return c;
}

json transformer_json(const TransformerConfig& t) {
  return json{{"num_layers", t.num_layers},       {"num_heads", t.num_heads},
              {"ff_size", t.ff_size},             {"dropout", t.dropout},
              {"max_positions", t.max_positions}, {"layer_norm_eps", t.layer_norm_eps}};
}

void resolve(RunConfig& c) {
  c.data.synthesis.seed = c.seed;
  c.pretrain.seed = c.seed;
  c.pretrain.temperature = c.model.temperature;
  c.finetune.seed = c.seed;
  json j;
  j["seed"] = c.seed;
  j["model"] = {{"hidden_size", c.model.lower.hidden_size},
                {"lower", transformer_json(c.model.lower)},
                {"upper", transformer_json(c.model.upper)},
                {"max_sentence_tokens", c.model.max_sentence_tokens},
                {"max_sentences", c.model.max_sentences},
                {"temperature", c.model.temperature}};
  j["pretrain"] = {{"batch_size", c.pretrain.batch_size},
                   {"grad_accumulation", c.pretrain.grad_accumulation},
                   {"epochs", c.pretrain.epochs},
                   {"base_lr", c.pretrain.base_lr},
                   {"warmup_steps", c.pretrain.warmup_steps},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"beta1", c.pretrain.beta1},
                   {"beta2", c.pretrain.beta2}};
  j["finetune"] = {{"lr", c.finetune.lr},
                   {"batch_size", c.finetune.batch_size},
                   {"grad_accumulation", c.finetune.grad_accumulation},
                   {"max_epochs", c.finetune.max_epochs},
                   {"warmup_steps", c.finetune.warmup_steps},
                   {"patience", c.finetune.patience},
                   {"num_classes", c.finetune.num_classes}};
  j["data"] = {{"dump", c.data.dump},
               {"triples", c.data.triples},
               {"checkpoint", c.data.checkpoint},
               {"segmentation", c.data.segmentation},
               {"min_frequency", c.data.min_frequency},
               {"synthesis",
                {{"languages", c.data.synthesis.languages},
                 {"num_concepts", c.data.synthesis.num_concepts},
                 {"min_pages_per_concept", c.data.synthesis.min_pages_per_concept},
                 {"max_pages_per_concept", c.data.synthesis.max_pages_per_concept},
                 {"num_categories", c.data.synthesis.num_categories},
                 {"min_sentences_per_doc", c.data.synthesis.min_sentences_per_doc},
                 {"max_sentences_per_doc", c.data.synthesis.max_sentences_per_doc},
                 {"shared_vocab_fraction", c.data.synthesis.shared_vocab_fraction}}}};
  j["eval"] = {{"segment_len", c.eval.segment_len},
               {"truncate_limit", c.eval.truncate_limit},
               {"top_k", c.eval.top_k},
               {"collection_lang", c.eval.collection_lang}};
  c.resolved = std::move(j);
}

std::string config_hash(const RunConfig& c) {
  const std::string s = c.resolved.dump();
  uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// ---- outputs ------------------------------------------------------------------

void emit_metrics(const std::vector<MetricRecord>& records,
                  const std::string& out_dir) {
  std::ofstream js(fs::path(out_dir) / "metrics.json");
  std::ofstream csv(fs::path(out_dir) / "metrics.csv");
  if (!js || !csv) throw ParseError("cannot write metrics under " + out_dir);
  csv << "task,split,metric,value,config_hash,seed\n";
  for (const MetricRecord& r : records) {
    json j;
    j["task"] = r.task;
    j["split"] = r.split;
    j["metric"] = r.metric;
    j["value"] = r.value;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    js << j.dump() << '\n';
    csv << r.task << ',' << r.split << ',' << r.metric << ','
        << json(r.value).dump() << ',' << r.config_hash << ',' << r.seed
        << '\n';
  }
}

SegmentationMode segmentation_mode(const std::string& name) {
  if (name == "sentence") return SegmentationMode::kSentence;
  if (name == "chunk") return SegmentationMode::kChunk;
  throw ParameterError("unknown segmentation '" + name + "'");
}

std::vector<SegmentedDocument> segment_all(const std::vector<Document>& docs,
                                           const Vocabulary& vocab,
                                           SegmentationMode mode,
                                           int chunk_size) {
  std::vector<SegmentedDocument> out;
  out.reserve(docs.size());
  for (const Document& d : docs)
    out.push_back(segment_document(d, vocab, mode, chunk_size));
  return out;
}

// labeled dump: the corpus dump format plus an integer `label` per record
void load_labeled(const std::string& path, std::vector<Document>& docs,
                  std::vector<int>& labels) {
  docs = load_dump(path);
  labels.clear();
  std::ifstream in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line);
    if (!j.contains("label") || !j["label"].is_number_integer())
      throw ParseError("line " + std::to_string(line_no) +
                       ": missing integer field 'label'");
    labels.push_back(j["label"].get<int>());
  }
}

void save_labeled(const std::vector<Document>& docs,
                  const std::vector<int>& labels, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (size_t i = 0; i < docs.size(); ++i) {
    json j;
    j["doc_id"] = docs[i].doc_id;
    j["lang"] = docs[i].lang;
    j["concept_id"] = docs[i].concept_id;
    j["categories"] = docs[i].categories;
    j["title"] = docs[i].title;
    j["sentences"] = docs[i].sentences;
    j["label"] = labels[i];
    out << j.dump() << '\n';
  }
}

// ---- commands -------------------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  int64_t seed_override = -1;
  int64_t downsample = -1;
  bool frozen_lower = false;
  std::string segmentation;  // empty: use config
  std::string encoder = "hmde";
};

RunConfig prepare(const CommonArgs& args) {
  RunConfig cfg = load_config(args.config_path);
  if (args.seed_override >= 0) cfg.seed = uint64_t(args.seed_override);
  if (!args.segmentation.empty()) cfg.data.segmentation = args.segmentation;
  resolve(cfg);
  fs::create_directories(args.out);
  return cfg;
}

int cmd_gen_corpus(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  auto docs = generate_synthetic_corpus(cfg.data.synthesis);
  save_dump(docs, (fs::path(args.out) / "corpus.jsonl").string());

  std::vector<int> labels;
  labels.reserve(docs.size());
  for (const Document& d : docs)
    labels.push_back(synthetic_label(d, cfg.finetune.num_classes));
  save_labeled(docs, labels, (fs::path(args.out) / "labeled.jsonl").string());

  // query = lead sentence of the first language's page; relevant = the same
  // concept's pages in the other languages
  const std::string& qlang = cfg.data.synthesis.languages.front();
  std::vector<Query> queries;
  Qrels qrels;
  for (const Document& d : docs) {
    if (d.lang != qlang) continue;
    bool has_other = false;
    for (const Document& o : docs)
      if (o.concept_id == d.concept_id && o.lang != qlang) {
        qrels[d.concept_id].insert(o.doc_id);
        has_other = true;
      }
    if (has_other)
      queries.push_back({d.concept_id, qlang, d.sentences.front()});
  }
  write_queries(queries, (fs::path(args.out) / "queries.jsonl").string());
  write_qrels(qrels, (fs::path(args.out) / "qrels.txt").string());

  json stats;
  stats["documents"] = docs.size();
  stats["queries"] = queries.size();
  stats["languages"] = cfg.data.synthesis.languages;
  stats["config_hash"] = config_hash(cfg);
  std::ofstream(fs::path(args.out) / "stats.json") << stats.dump(2) << '\n';
  return 0;
}

int cmd_mine(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  if (cfg.data.dump.empty())
    throw ParameterError("mine requires data.dump in the config");
  auto docs = load_dump(cfg.data.dump);
  std::set<std::string> langs;
  for (const Document& d : docs) langs.insert(d.lang);
  MiningStats stats;
  auto triples = mine_triples(
      docs, std::vector<std::string>(langs.begin(), langs.end()), cfg.seed,
      &stats);
  if (args.downsample >= 0)
    triples = downsample_triples(triples, size_t(args.downsample), cfg.seed);
  save_triples(triples, (fs::path(args.out) / "triples.jsonl").string());
  json j;
  j["concepts_kept"] = stats.concepts_kept;
  j["pairs_total"] = stats.pairs_total;
  j["pairs_dropped_no_negative"] = stats.pairs_dropped_no_negative;
  j["triples_written"] = triples.size();
  j["config_hash"] = config_hash(cfg);
  std::ofstream(fs::path(args.out) / "stats.json") << j.dump(2) << '\n';
  return 0;
}

HmdeModel build_model(const RunConfig& cfg, int vocab_size) {
  HmdeModel model;
  model.cfg = cfg.model;
  model.cfg.lower.vocab_size = vocab_size;
  model.cfg.upper.vocab_size = 0;
  model.init(cfg.seed);
  return model;
}

int cmd_pretrain(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  if (cfg.data.dump.empty() || cfg.data.triples.empty())
    throw ParameterError("pretrain requires data.dump and data.triples");
  auto docs = load_dump(cfg.data.dump);
  auto triples = load_triples(cfg.data.triples);
  Vocabulary vocab = build_vocab(docs, cfg.data.min_frequency);
  auto segmented = segment_all(docs, vocab, segmentation_mode(cfg.data.segmentation),
                               cfg.model.max_sentence_tokens);

  HmdeModel model = build_model(cfg, vocab.size());
  save_checkpoint((fs::path(args.out) / "init_checkpoint.bin").string(),
                  make_checkpoint(model, vocab));
  if (args.frozen_lower) set_lower_frozen(model, true);

  PretrainResult result = pretrain(model, triples, segmented, cfg.pretrain);

  set_lower_frozen(model, false);  // persist an unfrozen model
  save_checkpoint((fs::path(args.out) / "checkpoint.bin").string(),
                  make_checkpoint(model, vocab));
  save_vocab(vocab, (fs::path(args.out) / "vocab.txt").string());
  std::ofstream trace(fs::path(args.out) / "loss_trace.txt");
  for (float v : result.loss_trace) trace << json(v).dump() << '\n';

  std::vector<MetricRecord> metrics;
  metrics.push_back({"pretrain", "train", "final_step_loss",
                     result.loss_trace.empty() ? 0.0 : result.loss_trace.back(),
                     config_hash(cfg), cfg.seed});
  metrics.push_back({"pretrain", "train", "optimizer_steps",
                     double(result.optimizer_steps), config_hash(cfg), cfg.seed});
  emit_metrics(metrics, args.out);
  return 0;
}

int cmd_finetune(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  if (cfg.data.checkpoint.empty())
    throw ParameterError("finetune requires data.checkpoint");
  if (cfg.data.labeled_train.empty() || cfg.data.labeled_val.empty())
    throw ParameterError("finetune requires labeled_train and labeled_val");

  HmdeModel model;
  Vocabulary vocab;
  restore_checkpoint(load_checkpoint(cfg.data.checkpoint), model, vocab);

  std::vector<Document> train_docs, val_docs;
  std::vector<int> train_labels, val_labels;
  load_labeled(cfg.data.labeled_train, train_docs, train_labels);
  load_labeled(cfg.data.labeled_val, val_docs, val_labels);
  const SegmentationMode mode = segmentation_mode(cfg.data.segmentation);
  auto train_seg = segment_all(train_docs, vocab, mode, cfg.model.max_sentence_tokens);
  auto val_seg = segment_all(val_docs, vocab, mode, cfg.model.max_sentence_tokens);

  ClassifierHead head;
  head.init(cfg.finetune.num_classes, model.cfg.lower.hidden_size, cfg.seed + 1);
  FinetuneResult result = finetune_classifier(model, head, train_seg,
                                              train_labels, val_seg, val_labels,
                                              cfg.finetune);

  save_checkpoint((fs::path(args.out) / "checkpoint.bin").string(),
                  make_checkpoint(model, vocab, &head));
  std::vector<MetricRecord> metrics;
  metrics.push_back({"xldc", "val", "best_epoch", double(result.best_epoch),
                     config_hash(cfg), cfg.seed});
  metrics.push_back({"xldc", "val", "best_val_loss",
                     result.val_losses.empty()
                         ? 0.0
                         : result.val_losses[result.best_epoch - 1],
                     config_hash(cfg), cfg.seed});
  emit_metrics(metrics, args.out);
  return 0;
}

int cmd_eval_cls(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  if (cfg.data.checkpoint.empty() || cfg.data.labeled_test.empty())
    throw ParameterError("eval-cls requires data.checkpoint and labeled_test");
  HmdeModel model;
  Vocabulary vocab;
  ClassifierHead head;
  restore_checkpoint(load_checkpoint(cfg.data.checkpoint), model, vocab, &head);
  if (!head.weight.defined())
    throw ParameterError("checkpoint has no classifier head");

  std::vector<Document> docs;
  std::vector<int> labels;
  load_labeled(cfg.data.labeled_test, docs, labels);
  auto segmented = segment_all(docs, vocab, segmentation_mode(cfg.data.segmentation),
                               cfg.model.max_sentence_tokens);
  const double acc = evaluate_accuracy(model, head, segmented, labels);
  emit_metrics({{"xldc", "test", "accuracy", acc, config_hash(cfg), cfg.seed}},
               args.out);
  return 0;
}

int cmd_eval_clir(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  if (cfg.data.checkpoint.empty() || cfg.data.dump.empty() ||
      cfg.data.queries.empty() || cfg.data.qrels.empty())
    throw ParameterError(
        "eval-clir requires data.checkpoint, dump, queries, and qrels");
  HmdeModel model;
  Vocabulary vocab;
  restore_checkpoint(load_checkpoint(cfg.data.checkpoint), model, vocab);

  auto all_docs = load_dump(cfg.data.dump);
  auto queries = load_queries(cfg.data.queries);
  Qrels qrels = load_qrels(cfg.data.qrels);

  std::string collection_lang = cfg.eval.collection_lang;
  if (collection_lang.empty() && !queries.empty()) {
    // default: everything not in the query language
    collection_lang = "";
  }
  std::vector<Document> collection;
  for (const Document& d : all_docs) {
    if (!collection_lang.empty()) {
      if (d.lang == collection_lang) collection.push_back(d);
    } else if (queries.empty() || d.lang != queries.front().lang) {
      collection.push_back(d);
    }
  }
  if (collection.empty()) throw ParameterError("empty retrieval collection");

  DocumentIndex index;
  if (args.encoder == "hmde") {
    auto segmented = segment_all(collection, vocab,
                                 segmentation_mode(cfg.data.segmentation),
                                 cfg.model.max_sentence_tokens);
    index = encode_collection(segmented, model);
  } else {
    std::vector<FlatDocument> flat;
    for (const Document& d : collection)
      flat.push_back({d.doc_id, flat_tokens(d, vocab)});
    if (args.encoder == "sliding")
      index = encode_collection_sliding(flat, model, cfg.eval.segment_len);
    else if (args.encoder == "truncated")
      index = encode_collection_truncated(flat, model, cfg.eval.truncate_limit);
    else
      throw ParameterError("unknown encoder '" + args.encoder + "'");
  }

  RetrievalRun run;
  run.tag = index.encoder_tag;
  for (const Query& q : queries) {
    Tensor qe = encode_query(tokenize(q.text, vocab), model);
    run.by_query[q.query_id] = rank_documents(qe, index, cfg.eval.top_k);
  }
  write_run(run, (fs::path(args.out) / "run.txt").string());
  const double map = mean_average_precision(run, qrels);
  emit_metrics({{"clir", "test", "map", map, config_hash(cfg), cfg.seed}},
               args.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical multilingual document encoder experiments"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file");
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--seed", args.seed_override, "override the config seed");
  };
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  add_common(gen);
  auto* mine = app.add_subcommand("mine", "mine training triples from a dump");
  add_common(mine);
  mine->add_option("--downsample", args.downsample, "keep only N triples");
  auto* pre = app.add_subcommand("pretrain", "contrastive document pretraining");
  add_common(pre);
  pre->add_flag("--frozen-lower", args.frozen_lower,
                "freeze the lower transformer during pretraining");
  pre->add_option("--segmentation", args.segmentation,
                  "sentence|chunk document segmentation");
  auto* fin = app.add_subcommand("finetune", "classifier fine-tuning");
  add_common(fin);
  fin->add_option("--segmentation", args.segmentation, "sentence|chunk");
  auto* ecls = app.add_subcommand("eval-cls", "classification accuracy");
  add_common(ecls);
  ecls->add_option("--segmentation", args.segmentation, "sentence|chunk");
  auto* eclir = app.add_subcommand("eval-clir", "cross-lingual retrieval MAP");
  add_common(eclir);
  eclir->add_option("--segmentation", args.segmentation, "sentence|chunk");
  eclir->add_option("--encoder", args.encoder, "hmde|sliding|truncated");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);  // prints usage naming the offending token
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(args);
    if (mine->parsed()) return cmd_mine(args);
    if (pre->parsed()) return cmd_pretrain(args);
    if (fin->parsed()) return cmd_finetune(args);
    if (ecls->parsed()) return cmd_eval_cls(args);
    if (eclir->parsed()) return cmd_eval_clir(args);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
