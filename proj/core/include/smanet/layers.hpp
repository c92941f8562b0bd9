#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smanet/ops.hpp"
#include "smanet/rng.hpp"
#include "smanet/tensor.hpp"

namespace smanet {

// Walks named state tensors. trainable=false marks buffers (running
// statistics) that persist in checkpoints but are not optimized.
using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor, bool trainable)>;

struct Conv2dLayer {
  Tensor weight;
  std::optional<Tensor> bias;
  ops::ConvSpec spec;

  static Conv2dLayer create(int in_channels, int out_channels, int kernel, ops::ConvSpec spec,
                            bool with_bias, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct Conv1dLayer {
  Tensor weight;
  Tensor bias;
  ops::ConvSpec spec;

  static Conv1dLayer create(int in_channels, int out_channels, int kernel, ops::ConvSpec spec,
                            Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct LinearLayer {
  Tensor weight;  // [out,in]
  Tensor bias;    // [out]

  static LinearLayer create(int in_features, int out_features, Rng& rng);
  Tensor forward(Tape& tape, const Tensor& x) const;
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  ops::BatchNormState state;
  float momentum = 0.1f;
  float epsilon = 1e-5f;

  static BatchNormLayer create(int channels);
  Tensor forward(Tape& tape, const Tensor& x, bool training);
  void visit(const std::string& prefix, const ParamVisitor& v);
};

struct MsdaConfig {
  int in_channels = 0;
  int out_channels = 0;
  int se_reduction = 4;

  void validate() const;
};

// Pointwise convolution followed by three hierarchically chained depthwise
// 3x3 branches at dilation rates 1,2,3, summed and gated per channel by a
// squeeze-and-excitation module.
class MsdaBlock {
 public:
  static MsdaBlock create(const MsdaConfig& config, Rng& rng);

  // x is the relu(BN(pointwise)) feature; returns y1,y2,y3 with
  // y1 = f1(x), y2 = f2(x + y1), y3 = f3(x + y2).
  std::array<Tensor, 3> separable_branches(Tape& tape, const Tensor& x, bool training);

  // Per-channel sigmoid gate computed from GAP(u) through the two-layer MLP.
  Tensor se_gate(Tape& tape, const Tensor& u) const;

  Tensor forward(Tape& tape, const Tensor& input, bool training);

  void visit(const std::string& prefix, const ParamVisitor& v);

  MsdaConfig config;
  Conv2dLayer pointwise;
  BatchNormLayer pointwise_bn;
  std::array<Conv2dLayer, 3> branches;
  std::array<BatchNormLayer, 3> branch_bns;
  LinearLayer se_fc1;
  LinearLayer se_fc2;
};

struct ConvLstmConfig {
  int input_channels = 0;
  int hidden_channels = 32;
  int kernel_size = 3;
  int num_layers = 2;

  void validate() const;
};

struct ConvLstmState {
  Tensor hidden;
  Tensor cell;
};

// Convolutional LSTM cell without peepholes; all gate convolutions use
// same-padding.
class ConvLstmCell {
 public:
  static ConvLstmCell create(int input_channels, int hidden_channels, int kernel, Rng& rng);

  ConvLstmState zero_state(int n, int h, int w) const;
  ConvLstmState step(Tape& tape, const Tensor& x, const ConvLstmState& state) const;

  void visit(const std::string& prefix, const ParamVisitor& v);

  int hidden_channels = 0;
  // gate order: input, forget, output, candidate
  std::array<Conv2dLayer, 4> wx;  // input->hidden, with bias
  std::array<Conv2dLayer, 4> wh;  // hidden->hidden, no bias
};

class ConvLstm {
 public:
  static ConvLstm create(const ConvLstmConfig& config, Rng& rng);

  // Consumes a sequence of [N,Cin,H,W] tensors; layer l+1 reads layer l's
  // hidden sequence. Initial states are zero. Returns the top layer's
  // hidden state at every position.
  std::vector<Tensor> unroll(Tape& tape, const std::vector<Tensor>& inputs) const;

  void visit(const std::string& prefix, const ParamVisitor& v);

  ConvLstmConfig config;
  std::vector<ConvLstmCell> cells;
};

}  // namespace smanet
