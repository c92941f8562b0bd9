#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smanet/layers.hpp"

namespace smanet {

struct ModelConfig {
  int input_size = 32;
  int num_classes = 3;
  std::vector<int> stage_channels = {16, 32, 64};
  int sequence_len = 5;
  int se_reduction = 4;
  int convlstm_hidden = 32;
  int convlstm_kernel = 3;
  int convlstm_layers = 2;
  int we_conv_channels = 8;
  int we_kernel = 3;

  void validate() const;
};

struct SlicePrediction {
  Tensor probs_slice;  // [T,K]
  Tensor probs_seq;    // [T,K]
  Tensor probs_final;  // [1,K]
  int predicted_class = 0;
};

// The full sequence classifier: a stem plus per-stage (MSDA block,
// stride-2 downsampling) backbone applied to each slice, per-slice heads, a
// stacked ConvLSTM over the slice features with per-position heads, and the
// 1-D-convolution weighted-ensemble head that fuses the per-position
// probabilities into the final prediction.
class SmaNet {
 public:
  SmaNet(const ModelConfig& config, std::uint64_t seed);

  struct ForwardResult {
    Tensor slice_logits;  // [T,K]
    Tensor seq_logits;    // [T,K]
    Tensor final_logits;  // [1,K]
    Tensor probs_slice;
    Tensor probs_seq;
    Tensor probs_final;
  };

  // slices is the whole sequence stacked as a batch: [T,1,S,S].
  ForwardResult forward(Tape& tape, const Tensor& slices, bool training);

  struct SequenceLogits {
    Tensor slice_logits;  // [T,K]
    Tensor seq_logits;    // [T,K]
    Tensor final_logits;  // [1,K]
  };

  // Training path: a whole batch of sequences stacked as [B*T,1,S,S] runs
  // through the backbone together, so batch-norm statistics pool over the
  // batch instead of a single sequence.
  std::vector<SequenceLogits> forward_batch(Tape& tape, const Tensor& stacked, int batch_size,
                                            bool training);

  // [N,1,S,S] -> [N,C_last,S/2^(stages+1),...]; the stem and every stage
  // halve the spatial extent.
  Tensor backbone_forward(Tape& tape, const Tensor& x, bool training);

  Tensor slice_head(Tape& tape, const Tensor& features) const;
  Tensor sequence_head(Tape& tape, const Tensor& hidden) const;

  // probs_seq [T,K] -> final logits [1,K]. Fails if T disagrees with the
  // width the ensemble FC was built for.
  Tensor weighted_ensemble(Tape& tape, const Tensor& probs_seq) const;

  // Eval-mode forward; predicted class is argmax of the final probabilities
  // with lowest-index tie-breaking.
  SlicePrediction predict(const Tensor& slices);

  void visit_params(const ParamVisitor& v);

  struct CensusEntry {
    std::string name;
    std::size_t numel;
    bool trainable;
  };
  std::vector<CensusEntry> census();
  std::size_t trainable_parameter_count();

  const ModelConfig& config() const { return config_; }

  struct Stage {
    MsdaBlock msda;
    Conv2dLayer down;
    BatchNormLayer down_bn;
  };

  Conv2dLayer stem;
  BatchNormLayer stem_bn;
  std::vector<Stage> stages;
  ConvLstm convlstm;
  LinearLayer slice_fc;
  LinearLayer seq_fc;
  Conv1dLayer we_conv;
  LinearLayer we_fc;

 private:
  ModelConfig config_;
};

int argmax_lowest(std::span<const float> values);

}  // namespace smanet
