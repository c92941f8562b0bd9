#pragma once

#include "smanet/ops.hpp"

namespace smanet {

// Slice-level loss: sum over positions of the cross entropy between each
// per-slice logit row and the shared sequence label.
Tensor loss_2d(Tape& tape, const Tensor& slice_logits, int target);

// Sequence-level loss: sum over positions of the cross entropy on the
// per-position logits, plus the cross entropy on the final ensemble logits
// (so the ensemble head receives gradient).
Tensor loss_3d(Tape& tape, const Tensor& seq_logits, const Tensor& final_logits, int target);

// Combined loss: l2d + lambda * l3d.
Tensor loss_sv(Tape& tape, const Tensor& l2d, const Tensor& l3d, float lambda);

}  // namespace smanet
