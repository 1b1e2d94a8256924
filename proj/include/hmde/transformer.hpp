#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "hmde/tensor.hpp"

namespace hmde {

struct TransformerConfig {
  int hidden_size = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ff_size = 2048;
  float dropout = 0.1f;
  int max_positions = 128;
  float layer_norm_eps = 1e-12f;
  int vocab_size = 0;  // 0: consumes vectors directly (upper transformer)

  void validate() const;
};

// Pre-norm encoder layer: x + Attn(LN1(x)), then x + FF(LN2(x)).
struct EncoderLayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor w1, b1, w2, b2;

  void collect(std::vector<Tensor>& out) const;
};

struct Transformer {
  TransformerConfig cfg;
  Tensor token_embedding;     // [V×h], only when vocab_size > 0
  Tensor position_embedding;  // [max_positions×h]
  std::vector<EncoderLayerParams> layers;

  void init(std::mt19937_64& rng);
  std::vector<Tensor> parameters() const;
};

// Deterministic dropout streams: one fresh substream per call, derived from
// (seed, counter). Null-equivalent in eval mode (training == false).
struct DropoutContext {
  bool training = false;
  uint64_t seed = 0;
  uint64_t counter = 0;

  uint64_t next_stream();
};

// One sequence plus its validity mask; mask[t] == 0 marks padding.
struct PaddedSequence {
  Tensor x;                // [T×h]
  std::vector<char> mask;  // length T, at least one true entry
};

// Token + learned positional embedding, then dropout.
Tensor embed_tokens(const Transformer& tf, const std::vector<int>& ids,
                    DropoutContext* drop);

Tensor multi_head_attention(const PaddedSequence& in,
                            const EncoderLayerParams& p,
                            const TransformerConfig& cfg);

Tensor encoder_layer(const PaddedSequence& in, const EncoderLayerParams& p,
                     const TransformerConfig& cfg, DropoutContext* drop);

// num_layers applications of encoder_layer; zero layers is the identity.
Tensor encode_sequence(const Transformer& tf, const PaddedSequence& in,
                       DropoutContext* drop);

// Row 0 of the last layer output, as a [h] vector.
Tensor pool_bos(const Tensor& y);

// N(0, 0.02) initialisation used for all weight matrices and embeddings.
Tensor init_normal(std::vector<int> shape, std::mt19937_64& rng,
                   float stddev = 0.02f);

}  // namespace hmde
