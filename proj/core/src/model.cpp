#include "smanet/model.hpp"

#include "smanet/common.hpp"

namespace smanet {

void ModelConfig::validate() const {
  require<ConfigError>(num_classes == 2 || num_classes == 3, "num_classes must be 2 or 3, got ",
                       num_classes);
  require<ConfigError>(!stage_channels.empty(), "stage_channels must not be empty");
  for (int c : stage_channels) require<ConfigError>(c > 0, "stage channels must be positive");
  const int down_factor = 1 << stage_channels.size();
  require<ConfigError>(input_size > 0 && input_size % down_factor == 0, "input_size ",
                       input_size, " must be divisible by ", down_factor);
  require<ConfigError>(sequence_len >= 1, "sequence_len must be positive");
  require<ConfigError>(sequence_len >= we_kernel, "sequence_len ", sequence_len,
                       " must be at least we_kernel ", we_kernel);
  require<ConfigError>(we_kernel % 2 == 1, "we_kernel must be odd for same-padding, got ",
                       we_kernel);
  require<ConfigError>(we_conv_channels > 0, "we_conv_channels must be positive");
  for (int c : stage_channels) {
    require<ConfigError>(c % se_reduction == 0 && se_reduction <= c, "se_reduction ",
                         se_reduction, " must divide every stage width, got stage ", c);
  }
}

SmaNet::SmaNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int c0 = config_.stage_channels.front();
  ops::ConvSpec down_spec;
  down_spec.stride = 2;
  down_spec.padding = 1;
  stem = Conv2dLayer::create(1, c0, 3, down_spec, /*with_bias=*/false, rng);
  stem_bn = BatchNormLayer::create(c0);
  int prev = c0;
  for (int c : config_.stage_channels) {
    Stage stage;
    MsdaConfig mc;
    mc.in_channels = prev;
    mc.out_channels = c;
    mc.se_reduction = config_.se_reduction;
    stage.msda = MsdaBlock::create(mc, rng);
    stage.down = Conv2dLayer::create(c, c, 3, down_spec, /*with_bias=*/false, rng);
    stage.down_bn = BatchNormLayer::create(c);
    stages.push_back(std::move(stage));
    prev = c;
  }
  ConvLstmConfig lc;
  lc.input_channels = prev;
  lc.hidden_channels = config_.convlstm_hidden;
  lc.kernel_size = config_.convlstm_kernel;
  lc.num_layers = config_.convlstm_layers;
  convlstm = ConvLstm::create(lc, rng);
  slice_fc = LinearLayer::create(prev, config_.num_classes, rng);
  seq_fc = LinearLayer::create(config_.convlstm_hidden, config_.num_classes, rng);
  ops::ConvSpec we_spec;
  we_spec.padding = (config_.we_kernel - 1) / 2;
  we_conv = Conv1dLayer::create(config_.num_classes, config_.we_conv_channels, config_.we_kernel,
                                we_spec, rng);
  we_fc = LinearLayer::create(config_.we_conv_channels * config_.sequence_len,
                              config_.num_classes, rng);
}

Tensor SmaNet::backbone_forward(Tape& tape, const Tensor& x, bool training) {
  require<ShapeError>(x.rank() == 4 && x.dim(1) == 1, "backbone expects [N,1,S,S], got ",
                      x.shape_str());
  Tensor h = stem.forward(tape, x);
  h = stem_bn.forward(tape, h, training);
  h = ops::relu(tape, h);
  for (Stage& stage : stages) {
    h = stage.msda.forward(tape, h, training);
    h = stage.down.forward(tape, h);
    h = stage.down_bn.forward(tape, h, training);
    h = ops::relu(tape, h);
  }
  return h;
}

Tensor SmaNet::slice_head(Tape& tape, const Tensor& features) const {
  return slice_fc.forward(tape, ops::global_avg_pool(tape, features));
}

Tensor SmaNet::sequence_head(Tape& tape, const Tensor& hidden) const {
  return seq_fc.forward(tape, ops::global_avg_pool(tape, hidden));
}

Tensor SmaNet::weighted_ensemble(Tape& tape, const Tensor& probs_seq) const {
  require<ShapeError>(probs_seq.rank() == 2 && probs_seq.dim(1) == config_.num_classes,
                      "weighted_ensemble expects [T,", config_.num_classes, "], got ",
                      probs_seq.shape_str());
  const int t = probs_seq.dim(0);
  require<ConfigError>(t >= config_.we_kernel, "weighted_ensemble needs T >= ",
                       config_.we_kernel, ", got T=", t);
  Tensor signal =
      ops::reshape(tape, ops::transpose2d(tape, probs_seq), {1, config_.num_classes, t});
  Tensor conv = ops::relu(tape, we_conv.forward(tape, signal));
  Tensor flat = ops::reshape(tape, conv, {1, config_.we_conv_channels * t});
  require<ShapeError>(flat.dim(1) == we_fc.weight.dim(1),
                      "weighted_ensemble FC was trained for T=", config_.sequence_len,
                      " but the sequence has T=", t);
  return we_fc.forward(tape, flat);
}

std::vector<SmaNet::SequenceLogits> SmaNet::forward_batch(Tape& tape, const Tensor& stacked,
                                                          int batch_size, bool training) {
  require<ShapeError>(stacked.rank() == 4 && stacked.dim(1) == 1,
                      "forward expects [B*T,1,S,S], got ", stacked.shape_str());
  require<ShapeError>(stacked.dim(2) == config_.input_size &&
                          stacked.dim(3) == config_.input_size,
                      "forward expects ", config_.input_size, "x", config_.input_size,
                      " slices, got ", stacked.shape_str());
  require<ShapeError>(batch_size >= 1 && stacked.dim(0) % batch_size == 0,
                      "stacked batch of ", stacked.dim(0), " slices is not divisible into ",
                      batch_size, " sequences");
  const int t = stacked.dim(0) / batch_size;
  Tensor features = backbone_forward(tape, stacked, training);
  Tensor all_slice_logits = slice_head(tape, features);

  // The recurrence runs once over the whole batch: position i consumes the
  // [batch,C,h,w] stack of every sequence's i-th slice.
  std::vector<Tensor> xs;
  xs.reserve(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) {
    if (batch_size == 1) {
      xs.push_back(ops::select_batch(tape, features, i));
    } else {
      std::vector<Tensor> rows;
      rows.reserve(static_cast<std::size_t>(batch_size));
      for (int b = 0; b < batch_size; ++b) {
        rows.push_back(ops::select_batch(tape, features, b * t + i));
      }
      xs.push_back(ops::concat_batch(tape, rows));
    }
  }
  std::vector<Tensor> hs = convlstm.unroll(tape, xs);
  Tensor hidden = ops::concat_batch(tape, hs);           // [t*batch, Ch, h, w]
  Tensor all_seq_logits = sequence_head(tape, hidden);   // row i*batch + b

  std::vector<SequenceLogits> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    SequenceLogits sl;
    sl.slice_logits = ops::slice_rows(tape, all_slice_logits, b * t, t);
    if (batch_size == 1) {
      sl.seq_logits = all_seq_logits;
    } else {
      std::vector<Tensor> rows;
      rows.reserve(static_cast<std::size_t>(t));
      for (int i = 0; i < t; ++i) {
        rows.push_back(ops::select_batch(tape, all_seq_logits, i * batch_size + b));
      }
      sl.seq_logits = ops::concat_batch(tape, rows);
    }
    Tensor probs_seq = ops::softmax(tape, sl.seq_logits);
    sl.final_logits = weighted_ensemble(tape, probs_seq);
    out.push_back(std::move(sl));
  }
  return out;
}

SmaNet::ForwardResult SmaNet::forward(Tape& tape, const Tensor& slices, bool training) {
  std::vector<SequenceLogits> batch = forward_batch(tape, slices, 1, training);
  ForwardResult r;
  r.slice_logits = batch[0].slice_logits;
  r.seq_logits = batch[0].seq_logits;
  r.final_logits = batch[0].final_logits;
  r.probs_slice = ops::softmax(tape, r.slice_logits);
  r.probs_seq = ops::softmax(tape, r.seq_logits);
  r.probs_final = ops::softmax(tape, r.final_logits);
  return r;
}

SlicePrediction SmaNet::predict(const Tensor& slices) {
  Tape tape;
  ForwardResult fwd = forward(tape, slices, /*training=*/false);
  SlicePrediction p;
  p.probs_slice = fwd.probs_slice;
  p.probs_seq = fwd.probs_seq;
  p.probs_final = fwd.probs_final;
  p.predicted_class = argmax_lowest(fwd.probs_final.values());
  return p;
}

void SmaNet::visit_params(const ParamVisitor& v) {
  stem.visit("stem.conv", v);
  stem_bn.visit("stem.bn", v);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i + 1);
    stages[i].msda.visit(prefix + ".msda", v);
    stages[i].down.visit(prefix + ".down.conv", v);
    stages[i].down_bn.visit(prefix + ".down.bn", v);
  }
  convlstm.visit("convlstm", v);
  slice_fc.visit("slice_head.fc", v);
  seq_fc.visit("seq_head.fc", v);
  we_conv.visit("we.conv", v);
  we_fc.visit("we.fc", v);
}

std::vector<SmaNet::CensusEntry> SmaNet::census() {
  std::vector<CensusEntry> entries;
  visit_params([&entries](const std::string& name, Tensor& t, bool trainable) {
    entries.push_back({name, t.numel(), trainable});
  });
  return entries;
}

std::size_t SmaNet::trainable_parameter_count() {
  std::size_t n = 0;
  visit_params([&n](const std::string&, Tensor& t, bool trainable) {
    if (trainable) n += t.numel();
  });
  return n;
}

int argmax_lowest(std::span<const float> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

}  // namespace smanet
