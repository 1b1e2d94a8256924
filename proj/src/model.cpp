#include "hmde/model.hpp"

#include <algorithm>

#include "hmde/errors.hpp"

namespace hmde {

void HmdeModel::init(uint64_t seed) {
  if (cfg.lower.vocab_size <= 0)
    throw ParameterError("lower transformer requires a vocabulary");
  if (cfg.upper.vocab_size != 0)
    throw ParameterError("upper transformer consumes vectors, not tokens");
  if (cfg.lower.hidden_size != cfg.upper.hidden_size)
    throw ParameterError("lower and upper hidden sizes must match");
  if (cfg.upper.max_positions < cfg.max_sentences + 1)
    throw ParameterError("upper max_positions must cover DBOS + sentences");
  std::mt19937_64 rng(seed);
  lower = Transformer{cfg.lower};
  lower.init(rng);
  upper = Transformer{cfg.upper};
  upper.init(rng);
  dbos_embedding = init_normal({1, cfg.lower.hidden_size}, rng);
  drop.seed = seed ^ 0xd1b54a32d192ed03ULL;
  drop.counter = 0;
  lower_frozen = false;
  training = false;
}

std::vector<Tensor> HmdeModel::parameters(bool trainable_only) const {
  std::vector<Tensor> out;
  if (!(trainable_only && lower_frozen)) {
    auto lp = lower.parameters();
    out.insert(out.end(), lp.begin(), lp.end());
  }
  auto up = upper.parameters();
  out.insert(out.end(), up.begin(), up.end());
  out.push_back(dbos_embedding);
  return out;
}

void set_lower_frozen(HmdeModel& model, bool frozen) {
  model.lower_frozen = frozen;
  for (Tensor& p : model.lower.parameters())
    p.set_requires_grad(!frozen);
}

namespace {

std::vector<int> truncated(const std::vector<int>& ids, int limit) {
  if (static_cast<int>(ids.size()) <= limit) return ids;
  return std::vector<int>(ids.begin(), ids.begin() + limit);
}

}  // namespace

Tensor encode_sentence_batch(const std::vector<std::vector<int>>& sentences,
                             HmdeModel& model) {
  if (sentences.empty())
    throw ContractError("encode_sentence_batch on an empty sentence list");
  const int limit = model.cfg.max_sentence_tokens;
  int width = 0;
  std::vector<std::vector<int>> batch;
  batch.reserve(sentences.size());
  for (const auto& s : sentences) {
    if (s.empty()) throw ContractError("empty sentence in batch");
    batch.push_back(truncated(s, limit));
    width = std::max(width, static_cast<int>(batch.back().size()));
  }
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (auto& ids : batch) {
    const int real = static_cast<int>(ids.size());
    std::vector<char> mask(width, 1);
    for (int t = real; t < width; ++t) {
      ids.push_back(kPadId);
      mask[t] = 0;
    }
    Tensor x = embed_tokens(model.lower, ids, model.dropout_ctx());
    Tensor y = encode_sequence(model.lower, {x, mask}, model.dropout_ctx());
    rows.push_back(slice_rows(y, 0, 1));  // BOS position
  }
  return concat_rows(rows);
}

EncodedDocument encode_document(const SegmentedDocument& doc,
                                HmdeModel& model) {
  if (doc.segments.empty())
    throw ContractError("encode_document on a document with no segments");
  std::vector<std::vector<int>> kept = doc.segments;
  if (static_cast<int>(kept.size()) > model.cfg.max_sentences)
    kept.resize(model.cfg.max_sentences);  // head truncation
  const int s = static_cast<int>(kept.size());

  Tensor sent = encode_sentence_batch(kept, model);  // [S×h]
  Tensor x = concat_rows({model.dbos_embedding, sent});
  // a zero-layer upper is a pure identity hook: no positions, no dropout
  if (model.upper.cfg.num_layers > 0) {
    Tensor pos = slice_rows(model.upper.position_embedding, 0, s + 1);
    x = add(x, pos);
    if (model.training && model.cfg.upper.dropout > 0.0f)
      x = dropout(x, model.cfg.upper.dropout, model.drop.next_stream());
  }
  std::vector<char> mask(s + 1, 1);
  Tensor y = encode_sequence(model.upper, {x, mask}, model.dropout_ctx());

  EncodedDocument out;
  out.doc_id = doc.doc_id;
  out.embedding = mean_rows(y, 1, s);  // DBOS position excluded
  out.num_sentences_used = s;
  return out;
}

Tensor encode_query(const std::vector<int>& query_ids, HmdeModel& model) {
  if (query_ids.empty()) throw ContractError("encode_query on an empty query");
  Tensor batch = encode_sentence_batch({query_ids}, model);
  return reshape(batch, {batch.dim(1)});
}

}  // namespace hmde
