#include "smanet/loss.hpp"

#include "smanet/common.hpp"

namespace smanet {

Tensor loss_2d(Tape& tape, const Tensor& slice_logits, int target) {
  require<ShapeError>(slice_logits.rank() == 2, "loss_2d expects [T,K] logits, got ",
                      slice_logits.shape_str());
  const std::vector<int> targets(static_cast<std::size_t>(slice_logits.dim(0)), target);
  return ops::cross_entropy_with_logits(tape, slice_logits, targets, ops::Reduction::Sum);
}

Tensor loss_3d(Tape& tape, const Tensor& seq_logits, const Tensor& final_logits, int target) {
  require<ShapeError>(seq_logits.rank() == 2, "loss_3d expects [T,K] logits, got ",
                      seq_logits.shape_str());
  require<ShapeError>(final_logits.rank() == 2 && final_logits.dim(0) == 1 &&
                          final_logits.dim(1) == seq_logits.dim(1),
                      "loss_3d expects [1,K] final logits, got ", final_logits.shape_str());
  const std::vector<int> targets(static_cast<std::size_t>(seq_logits.dim(0)), target);
  Tensor per_position =
      ops::cross_entropy_with_logits(tape, seq_logits, targets, ops::Reduction::Sum);
  Tensor final_term =
      ops::cross_entropy_with_logits(tape, final_logits, {target}, ops::Reduction::Sum);
  return ops::add(tape, per_position, final_term);
}

Tensor loss_sv(Tape& tape, const Tensor& l2d, const Tensor& l3d, float lambda) {
  require<ConfigError>(lambda >= 0.0f, "loss balance weight must be non-negative");
  return ops::add(tape, l2d, ops::mul_scalar(tape, l3d, lambda));
}

}  // namespace smanet
