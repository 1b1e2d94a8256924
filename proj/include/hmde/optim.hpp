#pragma once

#include <cstdint>
#include <vector>

#include "hmde/tensor.hpp"

namespace hmde {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

// Decoupled weight decay:
//   theta <- theta - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * theta )
// Moments are kept in double so the scalar oracle tolerances stay tight.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

  // Requires every parameter to carry a gradient; throws ContractError
  // otherwise. Does not clear gradients.
  void step(float lr);
  void zero_grad();

  int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::vector<Tensor> params_;
  std::vector<Moments> state_;
  AdamWConfig cfg_;
  int64_t step_ = 0;
};

struct LrSchedule {
  float base_lr = 1e-5f;
  int64_t warmup_steps = 1000;
  int64_t total_steps = 0;
};

// Linear ramp 0 -> base_lr over [0, warmup], then linear decay back to 0 at
// total_steps. Steps past total_steps clamp to 0.
float lr_at_step(const LrSchedule& sched, int64_t step);

}  // namespace hmde
