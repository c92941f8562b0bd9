#include "smanet/optim.hpp"

#include <cmath>

#include "smanet/common.hpp"

namespace smanet {

void Adam::step(const std::vector<ParamRef>& params, float lr) {
  require<ConfigError>(config_.epsilon > 0.0f, "Adam epsilon must be positive");
  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(step_));
  for (const ParamRef& p : params) {
    require<Error>(p.tensor.requires_grad(), "Adam got a parameter without grad: ", p.name);
    auto it = slots_.find(p.name);
    if (it == slots_.end()) {
      Slot slot{Tensor(p.tensor.dims()), Tensor(p.tensor.dims())};
      it = slots_.emplace(p.name, std::move(slot)).first;
    }
    require<ShapeError>(it->second.m.same_dims(p.tensor), "Adam slot shape mismatch for ",
                        p.name);
    Tensor param = p.tensor;  // shared handle
    auto grad = param.grad();
    auto values = param.values();
    auto m = it->second.m.values();
    auto v = it->second.v.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      require<NumericError>(std::isfinite(g), "non-finite gradient in parameter ", p.name);
      const double mi = config_.beta1 * static_cast<double>(m[i]) + (1.0 - config_.beta1) * g;
      const double vi =
          config_.beta2 * static_cast<double>(v[i]) + (1.0 - config_.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + config_.epsilon);
      const double next = static_cast<double>(values[i]) - update;
      require<NumericError>(std::isfinite(next), "non-finite value in parameter ", p.name,
                            " after optimizer step");
      values[i] = static_cast<float>(next);
    }
    param.zero_grad();
  }
}

double scheduled_lr(double base_lr, double decay, int epoch) {
  return base_lr * std::pow(decay, static_cast<double>(epoch));
}

}  // namespace smanet
