#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcp/tensor.hpp"

namespace pcp {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// AdamW with the warmup-linear schedule: lr ramps linearly from 0 to peak_lr
// over warmup_proportion * total_steps optimizer steps, then decays linearly
// to 0 at total_steps.
struct AdamWConfig {
  float peak_lr = 2e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float epsilon = 1e-6f;
  float weight_decay = 0.01f;
  float warmup_proportion = 0.06f;
  int64_t total_steps = 1000;
};

float learning_rate_at(const AdamWConfig& cfg, int64_t step);

class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, AdamWConfig cfg);

  // Applies one decoupled-weight-decay Adam update with bias-corrected
  // moments, then zeroes the gradients and advances the step counter.
  void step();

  int64_t step_count() const { return step_; }
  float current_lr() const { return learning_rate_at(cfg_, step_); }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamWConfig cfg_;
  int64_t step_ = 0;
};

}  // namespace pcp
