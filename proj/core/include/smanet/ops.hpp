#pragma once

#include <optional>
#include <vector>

#include "smanet/autograd.hpp"
#include "smanet/tensor.hpp"

namespace smanet::ops {

// Convolution geometry. Padding is symmetric zero-padding; a 3x3 kernel with
// dilation d keeps spatial size when padding == d.
struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

int conv_out_extent(int in, int kernel, const ConvSpec& spec);

// Elementwise; shapes must match exactly (scalar broadcast has the _scalar
// variants).
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add_scalar(Tape& tape, const Tensor& a, float c);
Tensor mul_scalar(Tape& tape, const Tensor& a, float c);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);

// input [N,Cin,H,W], weight [Cout,Cin/groups,k,k], bias [Cout] or absent.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, const ConvSpec& spec);

// input [N,C,L], weight [Cout,C/groups,k].
Tensor conv1d(Tape& tape, const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, const ConvSpec& spec);

// input [N,Fin], weight [Fout,Fin], bias [Fout].
Tensor fully_connected(Tape& tape, const Tensor& input, const Tensor& weight,
                       const Tensor& bias);

// Running statistics owned by the layer; updated only in training mode.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

// input [N,C,H,W]; gamma/beta [C]. Training mode normalizes by batch
// statistics (biased variance) and folds them into the running state with
// the given momentum; eval mode uses the running state unchanged.
Tensor batch_norm(Tape& tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, float momentum = 0.1f,
                  float epsilon = 1e-5f);

// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(Tape& tape, const Tensor& input);

// Row softmax, [N,K] -> [N,K], max-subtracted for stability.
Tensor softmax(Tape& tape, const Tensor& logits);

enum class Reduction { Mean, Sum };

// -log p[target] per row, reduced. targets.size() must equal N.
Tensor cross_entropy_with_logits(Tape& tape, const Tensor& logits,
                                 const std::vector<int>& targets,
                                 Reduction reduction = Reduction::Mean);

struct SoftmaxXent {
  Tensor loss;   // scalar, mean over rows
  Tensor probs;  // [N,K]
};

// Convenience pairing of softmax and the stabilized cross entropy on the
// same logits.
SoftmaxXent softmax_cross_entropy(Tape& tape, const Tensor& logits,
                                  const std::vector<int>& targets);

// u [N,C,H,W] scaled per channel by s [N,C].
Tensor channel_scale(Tape& tape, const Tensor& u, const Tensor& s);

// Row index along axis 0, keeping a leading extent of 1.
Tensor select_batch(Tape& tape, const Tensor& x, int index);

// Contiguous [start, start+count) range along axis 0.
Tensor slice_rows(Tape& tape, const Tensor& x, int start, int count);

// Stacks tensors along axis 0; trailing dims must match.
Tensor concat_batch(Tape& tape, const std::vector<Tensor>& parts);

// Same element count, row-major order preserved.
Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> dims);

// [A,B] -> [B,A].
Tensor transpose2d(Tape& tape, const Tensor& x);

Tensor sum_all(Tape& tape, const Tensor& x);

}  // namespace smanet::ops
