#pragma once

#include <string>
#include <vector>

#include "hmde/transformer.hpp"

namespace hmde {

// A document reduced to token ids, one id list per segment (sentence or
// fixed-size chunk). Every segment starts with [BOS].
struct SegmentedDocument {
  std::string doc_id;
  std::vector<std::vector<int>> segments;
};

struct EncodedDocument {
  std::string doc_id;
  Tensor embedding;  // [h]
  int num_sentences_used = 0;
};

struct HmdeConfig {
  TransformerConfig lower;  // vocab_size > 0
  TransformerConfig upper;  // vocab_size == 0
  int max_sentence_tokens = 128;
  int max_sentences = 32;
  float temperature = 0.1f;
};

struct HmdeModel {
  HmdeConfig cfg;
  Transformer lower;
  Transformer upper;
  Tensor dbos_embedding;  // [1×h], learned
  bool lower_frozen = false;
  bool training = false;
  DropoutContext drop;  // seeded from the run seed

  void init(uint64_t seed);

  // All parameters; when trainable_only, frozen lower parameters are skipped.
  std::vector<Tensor> parameters(bool trainable_only = false) const;

  DropoutContext* dropout_ctx() { return training ? &drop : nullptr; }
};

// Lower encoder over a batch of sentences, padded to a common width and
// masked; returns the BOS embeddings stacked as [S×h].
Tensor encode_sentence_batch(const std::vector<std::vector<int>>& sentences,
                             HmdeModel& model);

// Full hierarchical encoding: lower sentence embeddings, DBOS prepended,
// upper contextualization, mean over the sentence positions (DBOS excluded).
EncodedDocument encode_document(const SegmentedDocument& doc, HmdeModel& model);

// Lower-encoder-only query embedding, [h].
Tensor encode_query(const std::vector<int>& query_ids, HmdeModel& model);

// When frozen, lower parameters stop requiring grad, so the tape records
// nothing for them and optimizer steps skip them.
void set_lower_frozen(HmdeModel& model, bool frozen);

constexpr int kPadId = 0;
constexpr int kUnkId = 1;
constexpr int kBosId = 2;

}  // namespace hmde
