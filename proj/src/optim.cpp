#include "hmde/optim.hpp"

#include <cmath>

#include "hmde/errors.hpp"

namespace hmde {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  state_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    state_[i].m.assign(params_[i].size(), 0.0);
    state_[i].v.assign(params_[i].size(), 0.0);
  }
}

void AdamW::step(float lr) {
  for (const Tensor& p : params_)
    if (!p.has_grad())
      throw ContractError("adamw step with a missing gradient");
  ++step_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bias1 = 1.0 - std::pow(b1, double(step_));
  const double bias2 = 1.0 - std::pow(b2, double(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& theta = params_[i].data();
    const auto& g = params_[i].grad();
    auto& m = state_[i].m;
    auto& v = state_[i].v;
    for (size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * double(g[k]) * g[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      theta[k] -= static_cast<float>(
          lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                cfg_.weight_decay * theta[k]));
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

float lr_at_step(const LrSchedule& sched, int64_t step) {
  if (step < 0) throw ParameterError("lr_at_step: negative step");
  if (sched.warmup_steps < 1 || sched.warmup_steps > sched.total_steps)
    throw ParameterError("lr schedule requires 0 < warmup <= total");
  if (step >= sched.total_steps) return 0.0f;  // past the end clamps to 0
  if (step <= sched.warmup_steps)
    return sched.base_lr * float(step) / float(sched.warmup_steps);
  return sched.base_lr * float(sched.total_steps - step) /
         float(sched.total_steps - sched.warmup_steps);
}

}  // namespace hmde
