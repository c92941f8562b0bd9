#include "smanet/layers.hpp"

#include <cmath>

#include "smanet/common.hpp"

namespace smanet {

namespace {

float fan_in_bound(int fan_in) { return 1.0f / std::sqrt(static_cast<float>(fan_in)); }

}  // namespace

Conv2dLayer Conv2dLayer::create(int in_channels, int out_channels, int kernel,
                                ops::ConvSpec spec, bool with_bias, Rng& rng) {
  require<ConfigError>(in_channels % spec.groups == 0 && out_channels % spec.groups == 0,
                       "conv groups must divide channel counts");
  Conv2dLayer l;
  l.spec = spec;
  const int cin_g = in_channels / spec.groups;
  const float bound = fan_in_bound(cin_g * kernel * kernel);
  l.weight = Tensor::uniform({out_channels, cin_g, kernel, kernel}, bound, rng);
  l.weight.set_requires_grad(true);
  if (with_bias) {
    l.bias = Tensor({out_channels});
    l.bias->set_requires_grad(true);
  }
  return l;
}

Tensor Conv2dLayer::forward(Tape& tape, const Tensor& x) const {
  return ops::conv2d(tape, x, weight, bias, spec);
}

void Conv2dLayer::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".weight", weight, true);
  if (bias) v(prefix + ".bias", *bias, true);
}

Conv1dLayer Conv1dLayer::create(int in_channels, int out_channels, int kernel,
                                ops::ConvSpec spec, Rng& rng) {
  Conv1dLayer l;
  l.spec = spec;
  const float bound = fan_in_bound((in_channels / spec.groups) * kernel);
  l.weight = Tensor::uniform({out_channels, in_channels / spec.groups, kernel}, bound, rng);
  l.weight.set_requires_grad(true);
  l.bias = Tensor({out_channels});
  l.bias.set_requires_grad(true);
  return l;
}

Tensor Conv1dLayer::forward(Tape& tape, const Tensor& x) const {
  return ops::conv1d(tape, x, weight, bias, spec);
}

void Conv1dLayer::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".weight", weight, true);
  v(prefix + ".bias", bias, true);
}

LinearLayer LinearLayer::create(int in_features, int out_features, Rng& rng) {
  LinearLayer l;
  l.weight = Tensor::uniform({out_features, in_features}, fan_in_bound(in_features), rng);
  l.weight.set_requires_grad(true);
  l.bias = Tensor({out_features});
  l.bias.set_requires_grad(true);
  return l;
}

Tensor LinearLayer::forward(Tape& tape, const Tensor& x) const {
  return ops::fully_connected(tape, x, weight, bias);
}

void LinearLayer::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".weight", weight, true);
  v(prefix + ".bias", bias, true);
}

BatchNormLayer BatchNormLayer::create(int channels) {
  BatchNormLayer l;
  l.gamma = Tensor::full({channels}, 1.0f);
  l.gamma.set_requires_grad(true);
  l.beta = Tensor({channels});
  l.beta.set_requires_grad(true);
  l.state.running_mean = Tensor({channels});
  l.state.running_var = Tensor::full({channels}, 1.0f);
  return l;
}

Tensor BatchNormLayer::forward(Tape& tape, const Tensor& x, bool training) {
  return ops::batch_norm(tape, x, gamma, beta, state, training, momentum, epsilon);
}

void BatchNormLayer::visit(const std::string& prefix, const ParamVisitor& v) {
  v(prefix + ".gamma", gamma, true);
  v(prefix + ".beta", beta, true);
  v(prefix + ".running_mean", state.running_mean, false);
  v(prefix + ".running_var", state.running_var, false);
}

void MsdaConfig::validate() const {
  require<ConfigError>(in_channels > 0 && out_channels > 0, "MSDA channel counts must be positive");
  require<ConfigError>(se_reduction > 0 && se_reduction <= out_channels &&
                           out_channels % se_reduction == 0,
                       "MSDA se_reduction ", se_reduction, " must divide out_channels ",
                       out_channels);
}

MsdaBlock MsdaBlock::create(const MsdaConfig& config, Rng& rng) {
  config.validate();
  MsdaBlock b;
  b.config = config;
  const int c = config.out_channels;
  b.pointwise = Conv2dLayer::create(config.in_channels, c, 1, {}, /*with_bias=*/false, rng);
  b.pointwise_bn = BatchNormLayer::create(c);
  for (int i = 0; i < 3; ++i) {
    ops::ConvSpec spec;
    spec.dilation = i + 1;
    spec.padding = i + 1;  // keeps spatial size for a 3x3 kernel
    spec.groups = c;
    b.branches[static_cast<std::size_t>(i)] =
        Conv2dLayer::create(c, c, 3, spec, /*with_bias=*/false, rng);
    b.branch_bns[static_cast<std::size_t>(i)] = BatchNormLayer::create(c);
  }
  b.se_fc1 = LinearLayer::create(c, c / config.se_reduction, rng);
  b.se_fc2 = LinearLayer::create(c / config.se_reduction, c, rng);
  return b;
}

std::array<Tensor, 3> MsdaBlock::separable_branches(Tape& tape, const Tensor& x, bool training) {
  std::array<Tensor, 3> ys;
  Tensor branch_in = x;
  for (int i = 0; i < 3; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Tensor y = branches[idx].forward(tape, branch_in);
    y = branch_bns[idx].forward(tape, y, training);
    y = ops::relu(tape, y);
    ys[idx] = y;
    if (i < 2) branch_in = ops::add(tape, x, y);
  }
  return ys;
}

Tensor MsdaBlock::se_gate(Tape& tape, const Tensor& u) const {
  Tensor z = ops::global_avg_pool(tape, u);
  Tensor a = ops::relu(tape, se_fc1.forward(tape, z));
  Tensor s = ops::sigmoid(tape, se_fc2.forward(tape, a));
  return ops::channel_scale(tape, u, s);
}

Tensor MsdaBlock::forward(Tape& tape, const Tensor& input, bool training) {
  Tensor x = pointwise.forward(tape, input);
  x = pointwise_bn.forward(tape, x, training);
  x = ops::relu(tape, x);
  const auto ys = separable_branches(tape, x, training);
  Tensor u = ops::add(tape, ops::add(tape, ys[0], ys[1]), ys[2]);
  return se_gate(tape, u);
}

void MsdaBlock::visit(const std::string& prefix, const ParamVisitor& v) {
  pointwise.visit(prefix + ".pointwise", v);
  pointwise_bn.visit(prefix + ".pointwise_bn", v);
  for (int i = 0; i < 3; ++i) {
    const std::string b = prefix + ".branch" + std::to_string(i + 1);
    branches[static_cast<std::size_t>(i)].visit(b + ".depthwise", v);
    branch_bns[static_cast<std::size_t>(i)].visit(b + ".bn", v);
  }
  se_fc1.visit(prefix + ".se.fc1", v);
  se_fc2.visit(prefix + ".se.fc2", v);
}

void ConvLstmConfig::validate() const {
  require<ConfigError>(input_channels > 0 && hidden_channels > 0 && num_layers > 0,
                       "ConvLSTM channel/layer counts must be positive");
  require<ConfigError>(kernel_size > 0 && kernel_size % 2 == 1,
                       "ConvLSTM kernel_size must be odd for exact same-padding, got ",
                       kernel_size);
}

ConvLstmCell ConvLstmCell::create(int input_channels, int hidden_channels, int kernel,
                                  Rng& rng) {
  ConvLstmCell cell;
  cell.hidden_channels = hidden_channels;
  ops::ConvSpec spec;
  spec.padding = (kernel - 1) / 2;
  for (int g = 0; g < 4; ++g) {
    cell.wx[static_cast<std::size_t>(g)] =
        Conv2dLayer::create(input_channels, hidden_channels, kernel, spec, /*with_bias=*/true,
                            rng);
    cell.wh[static_cast<std::size_t>(g)] =
        Conv2dLayer::create(hidden_channels, hidden_channels, kernel, spec, /*with_bias=*/false,
                            rng);
  }
  // forget-gate bias starts at 1 so early steps retain memory
  for (float& v : cell.wx[1].bias->values()) v = 1.0f;
  return cell;
}

ConvLstmState ConvLstmCell::zero_state(int n, int h, int w) const {
  ConvLstmState s;
  s.hidden = Tensor({n, hidden_channels, h, w});
  s.cell = Tensor({n, hidden_channels, h, w});
  return s;
}

ConvLstmState ConvLstmCell::step(Tape& tape, const Tensor& x, const ConvLstmState& state) const {
  require<ShapeError>(x.rank() == 4 && state.hidden.rank() == 4, "ConvLSTM step expects 4-D");
  require<ShapeError>(
      x.dim(0) == state.hidden.dim(0) && x.dim(2) == state.hidden.dim(2) &&
          x.dim(3) == state.hidden.dim(3),
      "ConvLSTM state/input spatial mismatch: ", x.shape_str(), " vs ", state.hidden.shape_str());
  auto gate = [&](int g) {
    return ops::add(tape, wx[static_cast<std::size_t>(g)].forward(tape, x),
                    wh[static_cast<std::size_t>(g)].forward(tape, state.hidden));
  };
  Tensor i = ops::sigmoid(tape, gate(0));
  Tensor f = ops::sigmoid(tape, gate(1));
  Tensor o = ops::sigmoid(tape, gate(2));
  Tensor g = ops::tanh(tape, gate(3));
  ConvLstmState next;
  next.cell = ops::add(tape, ops::mul(tape, f, state.cell), ops::mul(tape, i, g));
  next.hidden = ops::mul(tape, o, ops::tanh(tape, next.cell));
  return next;
}

void ConvLstmCell::visit(const std::string& prefix, const ParamVisitor& v) {
  static const char* kGateNames[4] = {"gate_i", "gate_f", "gate_o", "gate_g"};
  for (int g = 0; g < 4; ++g) {
    const std::string base = prefix + "." + kGateNames[g];
    wx[static_cast<std::size_t>(g)].visit(base + ".wx", v);
    wh[static_cast<std::size_t>(g)].visit(base + ".wh", v);
  }
}

ConvLstm ConvLstm::create(const ConvLstmConfig& config, Rng& rng) {
  config.validate();
  ConvLstm lstm;
  lstm.config = config;
  for (int l = 0; l < config.num_layers; ++l) {
    const int in_ch = l == 0 ? config.input_channels : config.hidden_channels;
    lstm.cells.push_back(
        ConvLstmCell::create(in_ch, config.hidden_channels, config.kernel_size, rng));
  }
  return lstm;
}

std::vector<Tensor> ConvLstm::unroll(Tape& tape, const std::vector<Tensor>& inputs) const {
  require<ConfigError>(!inputs.empty(), "ConvLSTM unroll needs a non-empty sequence");
  for (const Tensor& x : inputs) {
    require<ShapeError>(x.same_dims(inputs.front()), "ConvLSTM sequence shapes must be uniform");
  }
  std::vector<Tensor> seq = inputs;
  for (const ConvLstmCell& cell : cells) {
    ConvLstmState state =
        cell.zero_state(seq.front().dim(0), seq.front().dim(2), seq.front().dim(3));
    std::vector<Tensor> hidden;
    hidden.reserve(seq.size());
    for (const Tensor& x : seq) {
      state = cell.step(tape, x, state);
      hidden.push_back(state.hidden);
    }
    seq = std::move(hidden);
  }
  return seq;
}

void ConvLstm::visit(const std::string& prefix, const ParamVisitor& v) {
  for (std::size_t l = 0; l < cells.size(); ++l) {
    cells[l].visit(prefix + ".layer" + std::to_string(l + 1), v);
  }
}

}  // namespace smanet
