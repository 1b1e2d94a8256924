#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hmde/corpus.hpp"
#include "hmde/model.hpp"
#include "hmde/optim.hpp"

namespace hmde {

struct PretrainConfig {
  int batch_size = 2;
  int grad_accumulation = 64;
  int epochs = 1;
  float base_lr = 1e-5f;
  int warmup_steps = 1000;
  float temperature = 0.1f;
  float weight_decay = 0.01f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  uint64_t seed = 0;
};

struct FinetuneConfig {
  float lr = 2e-5f;
  int batch_size = 4;
  int grad_accumulation = 8;
  int max_epochs = 50;
  int warmup_steps = 200;
  int patience = 7;
  int num_classes = 4;
  uint64_t seed = 0;
};

struct ClassifierHead {
  Tensor weight;  // [C×h]
  Tensor bias;    // [C]

  void init(int num_classes, int hidden_size, uint64_t seed);
};

struct PretrainResult {
  std::vector<float> loss_trace;  // per-step batch-sum loss
  int optimizer_steps = 0;
};

// Shuffled seeded pass over the triples; backward accumulates gradients
// additively and the optimizer fires every grad_accumulation batches (plus
// an end-of-epoch flush), with lr from the linear warmup/decay schedule.
PretrainResult pretrain(HmdeModel& model,
                        const std::vector<TrainingTriple>& triples,
                        const std::vector<SegmentedDocument>& documents,
                        const PretrainConfig& cfg);

// softmax(W * encode_document(doc) + b), dropout off.
std::vector<float> classify(const SegmentedDocument& doc, HmdeModel& model,
                            const ClassifierHead& head);

// Strict-improvement early stopping over validation losses.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  // Records one epoch's validation loss; returns true on strict improvement.
  bool observe(double val_loss);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based
  int epochs_seen() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_ = 0.0;
};

struct FinetuneResult {
  std::vector<double> val_losses;  // one per completed epoch
  int best_epoch = 0;              // 1-based epoch whose parameters are kept
  int epochs_run = 0;
};

// Cross-entropy AdamW fine-tuning (no weight decay) with early stopping on
// validation loss; restores the best epoch's parameters into model + head.
// The lower transformer is always unfrozen here.
FinetuneResult finetune_classifier(HmdeModel& model, ClassifierHead& head,
                                   const std::vector<SegmentedDocument>& train_docs,
                                   const std::vector<int>& train_labels,
                                   const std::vector<SegmentedDocument>& val_docs,
                                   const std::vector<int>& val_labels,
                                   const FinetuneConfig& cfg);

// Fraction of argmax-correct predictions; argmax ties go to the lowest index.
double evaluate_accuracy(HmdeModel& model, const ClassifierHead& head,
                         const std::vector<SegmentedDocument>& docs,
                         const std::vector<int>& labels);

// ---- checkpoints ------------------------------------------------------------

struct Checkpoint {
  uint32_t version = 1;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string config_json;  // model-config snapshot
  std::string vocab_text;   // save_vocab format, reserved ids implicit
};

std::vector<std::pair<std::string, Tensor>> named_parameters(
    const HmdeModel& model, const ClassifierHead* head = nullptr);

Checkpoint make_checkpoint(const HmdeModel& model, const Vocabulary& vocab,
                           const ClassifierHead* head = nullptr);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds model (+ optional head) and vocabulary from a checkpoint.
void restore_checkpoint(const Checkpoint& ckpt, HmdeModel& model,
                        Vocabulary& vocab,
                        ClassifierHead* head = nullptr);

struct MetricRecord {
  std::string task;
  std::string split;
  std::string metric;
  double value = 0.0;
  std::string config_hash;
  uint64_t seed = 0;
};

}  // namespace hmde
