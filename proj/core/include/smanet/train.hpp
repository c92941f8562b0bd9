#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "smanet/dataset.hpp"
#include "smanet/metrics.hpp"
#include "smanet/model.hpp"
#include "smanet/optim.hpp"

namespace smanet {

struct TrainConfig {
  float learning_rate = 1e-4f;
  float lr_decay = 0.95f;
  float lambda = 1.0f;
  int epochs = 30;
  int batch_size = 4;
  std::uint64_t seed = 1;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  bool photometric_jitter = false;

  void validate() const;
  AdamConfig adam_config() const { return {beta1, beta2, epsilon}; }
};

struct EpochRow {
  int epoch = 0;          // 0-based
  double train_loss = 0;  // mean per-sequence combined loss over the epoch
  double val_bacc = 0;
  double lr = 0;
};

// One tab-separated line: epoch, train_loss, val_balanced_accuracy, lr.
std::string format_metrics_row(const EpochRow& row);

struct TrainHooks {
  // Called after every epoch; is_best marks a new best validation score.
  std::function<void(const EpochRow& row, bool is_best)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRow> rows;
  int best_epoch = -1;
  double best_val = -1.0;
};

// Deterministic training: epoch order is a pure function of (seed, epoch),
// batches are whole sequences, gradients average over the batch. Throws
// NumericError if the loss goes non-finite.
TrainResult train_loop(SmaNet& model, Adam& adam, const std::vector<SequenceSample>& train,
                       const std::vector<SequenceSample>& val, const TrainConfig& config,
                       int start_epoch = 0, const TrainHooks& hooks = {});

enum class InferenceMode {
  kWeightedEnsemble,  // argmax of the ensemble head's probabilities
  kSliceMajority,     // majority vote over per-slice argmaxes
};

struct Evaluation {
  ConfusionMatrix cm;
  std::vector<int> predictions;
  std::vector<std::vector<float>> final_probs;  // per sample, length K
  double balanced_acc = 0.0;
};

Evaluation evaluate(SmaNet& model, const std::vector<SequenceSample>& samples,
                    InferenceMode mode = InferenceMode::kWeightedEnsemble);

// Narrow-vs-synechiae AUC for K=3 (synechiae probability as the score over
// samples of classes 1 and 2); plain class-1 AUC for K=2. Absent when a side
// is empty.
std::optional<double> evaluation_auc(const Evaluation& eval,
                                     const std::vector<SequenceSample>& samples,
                                     int num_classes);

}  // namespace smanet
