#pragma once

#include "hmde/tensor.hpp"

namespace hmde {

// One contrastive step: N anchors, their cross-lingual positives, and their
// same-language hard negatives, all as [N×h] document embeddings.
struct ContrastiveBatch {
  Tensor anchors;
  Tensor positives;
  Tensor hard_negatives;
  float temperature = 0.1f;
};

// S[i][j] = cos(anchors[i], others[j]); differentiable through both sides.
Tensor similarity_matrix(const Tensor& anchors, const Tensor& others);

// InfoNCE with hard negatives, summed over the batch:
//   sum_i [ -cos(a_i, p_i)/tau
//           + log( exp(cos(a_i, n_i)/tau) + sum_j exp(cos(a_i, p_j)/tau) ) ]
// The j-sum deliberately includes j == i. Log for humans divides by N; the
// gradient follows the sum.
Tensor contrastive_loss(const ContrastiveBatch& batch);

}  // namespace hmde
