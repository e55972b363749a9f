#include "pcp/optim.hpp"

#include <cmath>

namespace pcp {

float learning_rate_at(const AdamWConfig& cfg, int64_t step) {
  const double total = static_cast<double>(cfg.total_steps);
  if (total <= 0.0) return cfg.peak_lr;
  const double warmup = static_cast<double>(cfg.warmup_proportion) * total;
  const double t = static_cast<double>(step);
  double ratio;
  if (warmup > 0.0 && t < warmup)
    ratio = t / warmup;
  else if (total > warmup)
    ratio = std::max(0.0, (total - t) / (total - warmup));
  else
    ratio = 0.0;
  return static_cast<float>(cfg.peak_lr * ratio);
}

AdamW::AdamW(std::vector<NamedParam> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0f);
  }
}

void AdamW::step() {
  const float lr = learning_rate_at(cfg_, step_);
  step_ += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.tensor.has_grad())
      throw ContractError("adamw: parameter '" + p.name + "' has no gradient");
    auto theta = p.tensor.values();
    auto g = p.tensor.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < m.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      const float mhat = static_cast<float>(m[i] / bc1);
      const float vhat = static_cast<float>(v[i] / bc2);
      theta[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon));
      theta[i] -= lr * cfg_.weight_decay * theta[i];
    }
    p.tensor.zero_grad();
  }
}

}  // namespace pcp
