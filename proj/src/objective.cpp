#include "hmde/objective.hpp"

#include "hmde/errors.hpp"

namespace hmde {

Tensor similarity_matrix(const Tensor& anchors, const Tensor& others) {
  return cosine_matrix(anchors, others);
}

Tensor contrastive_loss(const ContrastiveBatch& batch) {
  if (!batch.anchors.defined() || batch.anchors.dim(0) < 1)
    throw ContractError("contrastive_loss on an empty batch");
  if (batch.temperature <= 0.0f)
    throw ParameterError("temperature must be > 0");
  if (batch.anchors.shape() != batch.positives.shape() ||
      batch.anchors.shape() != batch.hard_negatives.shape())
    throw ShapeError("contrastive batch tensors must share [N x h]");
  Tensor sims = cosine_matrix(batch.anchors, batch.positives);
  Tensor hard = cosine_pairs(batch.anchors, batch.hard_negatives);
  return info_nce(sims, hard, batch.temperature);
}

}  // namespace hmde
