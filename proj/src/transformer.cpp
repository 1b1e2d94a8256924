#include "hmde/transformer.hpp"

#include <cmath>

#include "hmde/errors.hpp"

namespace hmde {

void TransformerConfig::validate() const {
  if (hidden_size < 1 || num_layers < 0 || num_heads < 1 || ff_size < 1)
    throw ParameterError("transformer config has non-positive sizes");
  if (hidden_size % num_heads != 0)
    throw ParameterError("hidden_size must be divisible by num_heads");
  if (dropout < 0.0f || dropout >= 1.0f)
    throw ParameterError("dropout must be in [0, 1)");
  if (max_positions < 1) throw ParameterError("max_positions must be >= 1");
}

Tensor init_normal(std::vector<int> shape, std::mt19937_64& rng, float stddev) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

void EncoderLayerParams::collect(std::vector<Tensor>& out) const {
  for (const Tensor* t :
       {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
        &ln2_gamma, &ln2_beta, &w1, &b1, &w2, &b2})
    out.push_back(*t);
}

void Transformer::init(std::mt19937_64& rng) {
  cfg.validate();
  if (cfg.vocab_size > 0)
    token_embedding = init_normal({cfg.vocab_size, cfg.hidden_size}, rng);
  position_embedding = init_normal({cfg.max_positions, cfg.hidden_size}, rng);
  const int h = cfg.hidden_size;
  layers.clear();
  layers.resize(cfg.num_layers);
  for (auto& l : layers) {
    l.ln1_gamma = Tensor::from_data({h}, std::vector<float>(h, 1.0f), true);
    l.ln1_beta = Tensor::zeros({h}, true);
    l.wq = init_normal({h, h}, rng);
    l.bq = Tensor::zeros({h}, true);
    l.wk = init_normal({h, h}, rng);
    l.bk = Tensor::zeros({h}, true);
    l.wv = init_normal({h, h}, rng);
    l.bv = Tensor::zeros({h}, true);
    l.wo = init_normal({h, h}, rng);
    l.bo = Tensor::zeros({h}, true);
    l.ln2_gamma = Tensor::from_data({h}, std::vector<float>(h, 1.0f), true);
    l.ln2_beta = Tensor::zeros({h}, true);
    l.w1 = init_normal({h, cfg.ff_size}, rng);
    l.b1 = Tensor::zeros({cfg.ff_size}, true);
    l.w2 = init_normal({cfg.ff_size, h}, rng);
    l.b2 = Tensor::zeros({h}, true);
  }
}

std::vector<Tensor> Transformer::parameters() const {
  std::vector<Tensor> out;
  if (token_embedding.defined()) out.push_back(token_embedding);
  out.push_back(position_embedding);
  for (const auto& l : layers) l.collect(out);
  return out;
}

uint64_t DropoutContext::next_stream() {
  // splitmix64 over (seed, counter)
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (++counter);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

Tensor maybe_dropout(const Tensor& x, float p, DropoutContext* drop) {
  if (!drop || !drop->training || p == 0.0f) return x;
  return dropout(x, p, drop->next_stream());
}

}  // namespace

Tensor embed_tokens(const Transformer& tf, const std::vector<int>& ids,
                    DropoutContext* drop) {
  if (tf.cfg.vocab_size <= 0)
    throw ContractError("embed_tokens on a transformer without a vocabulary");
  if (ids.empty()) throw ContractError("embed_tokens on an empty sequence");
  const int t = static_cast<int>(ids.size());
  if (t > tf.cfg.max_positions)
    throw VocabularyError("sequence length " + std::to_string(t) +
                          " exceeds max_positions " +
                          std::to_string(tf.cfg.max_positions));
  for (int id : ids)
    if (id < 0 || id >= tf.cfg.vocab_size)
      throw VocabularyError("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(tf.cfg.vocab_size));
  Tensor tok = gather_rows(tf.token_embedding, ids);
  Tensor pos = slice_rows(tf.position_embedding, 0, t);
  return maybe_dropout(add(tok, pos), tf.cfg.dropout, drop);
}

Tensor multi_head_attention(const PaddedSequence& in,
                            const EncoderLayerParams& p,
                            const TransformerConfig& cfg) {
  const int t = in.x.dim(0);
  if (static_cast<int>(in.mask.size()) != t)
    throw ShapeError("mask length does not match sequence length");
  bool any = false;
  for (char m : in.mask) any |= (m != 0);
  if (!any) throw ContractError("fully masked sequence");

  Tensor q = add_row_broadcast(matmul(in.x, p.wq), p.bq);
  Tensor k = add_row_broadcast(matmul(in.x, p.wk), p.bk);
  Tensor v = add_row_broadcast(matmul(in.x, p.wv), p.bv);

  const int dk = cfg.hidden_size / cfg.num_heads;
  const float scl = 1.0f / std::sqrt(static_cast<float>(dk));
  std::vector<Tensor> heads;
  heads.reserve(cfg.num_heads);
  for (int hd = 0; hd < cfg.num_heads; ++hd) {
    Tensor qh = slice_cols(q, hd * dk, dk);
    Tensor kh = slice_cols(k, hd * dk, dk);
    Tensor vh = slice_cols(v, hd * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), scl);
    Tensor probs = softmax(mask_keys(scores, in.mask));
    heads.push_back(matmul(probs, vh));
  }
  return add_row_broadcast(matmul(concat_cols(heads), p.wo), p.bo);
}

Tensor encoder_layer(const PaddedSequence& in, const EncoderLayerParams& p,
                     const TransformerConfig& cfg, DropoutContext* drop) {
  const float eps = cfg.layer_norm_eps;
  PaddedSequence normed{layer_norm(in.x, p.ln1_gamma, p.ln1_beta, eps),
                        in.mask};
  Tensor x = add(in.x, maybe_dropout(multi_head_attention(normed, p, cfg),
                                     cfg.dropout, drop));
  Tensor h = layer_norm(x, p.ln2_gamma, p.ln2_beta, eps);
  Tensor ff = add_row_broadcast(
      matmul(gelu(add_row_broadcast(matmul(h, p.w1), p.b1)), p.w2), p.b2);
  return add(x, maybe_dropout(ff, cfg.dropout, drop));
}

Tensor encode_sequence(const Transformer& tf, const PaddedSequence& in,
                       DropoutContext* drop) {
  Tensor y = in.x;
  for (const auto& l : tf.layers)
    y = encoder_layer({y, in.mask}, l, tf.cfg, drop);
  return y;
}

Tensor pool_bos(const Tensor& y) {
  if (y.rank() != 2 || y.dim(0) < 1)
    throw ContractError("pool_bos on an empty sequence");
  return reshape(slice_rows(y, 0, 1), {y.dim(1)});
}

}  // namespace hmde
