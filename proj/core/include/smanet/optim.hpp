#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smanet/tensor.hpp"

namespace smanet {

struct ParamRef {
  std::string name;
  Tensor tensor;
};

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

// Bias-corrected Adam. Moment slots are created lazily per parameter name and
// the step counter is shared, so a (params, state) pair round-trips through
// checkpoints exactly.
class Adam {
 public:
  struct Slot {
    Tensor m;
    Tensor v;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update using each parameter's accumulated gradient, then
  // clears the gradients. Throws NumericError naming the parameter if a
  // gradient or updated value is non-finite.
  void step(const std::vector<ParamRef>& params, float lr);

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t t) { step_ = t; }

  const AdamConfig& config() const { return config_; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Slot> slots_;
};

// Learning rate for a given epoch under the per-epoch exponential schedule.
double scheduled_lr(double base_lr, double decay, int epoch);

}  // namespace smanet
