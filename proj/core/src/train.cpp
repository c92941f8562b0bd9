#include "smanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "smanet/common.hpp"
#include "smanet/loss.hpp"
#include "smanet/rng.hpp"

namespace smanet {

void TrainConfig::validate() const {
  require<ConfigError>(learning_rate > 0.0f, "learning_rate must be positive");
  require<ConfigError>(lr_decay > 0.0f && lr_decay <= 1.0f, "lr_decay must be in (0,1]");
  require<ConfigError>(lambda >= 0.0f, "lambda must be non-negative");
  require<ConfigError>(epochs >= 0, "epochs must be non-negative");
  require<ConfigError>(batch_size >= 1, "batch_size must be positive");
  require<ConfigError>(epsilon > 0.0f, "epsilon must be positive");
}

std::string format_metrics_row(const EpochRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.8e", row.epoch, row.train_loss,
                row.val_bacc, row.lr);
  return buf;
}

namespace {

// Per-sample photometric jitter, derived from (seed, epoch, sequence) so a
// resumed run replays the identical stream.
Tensor jitter_slices(const Tensor& slices, std::uint64_t seed, int epoch, int sequence_id) {
  Rng rng(Rng::derive(Rng::derive(seed, 0x01170000 + static_cast<std::uint64_t>(epoch)),
                      static_cast<std::uint64_t>(sequence_id)));
  const float brightness = static_cast<float>(rng.uniform(-0.1, 0.1));
  const float contrast = static_cast<float>(rng.uniform(0.9, 1.1));
  Tensor out = slices.clone();
  for (float& v : out.values()) {
    v = std::clamp((v - 0.5f) * contrast + 0.5f + brightness, 0.0f, 1.0f);
  }
  return out;
}

int majority_slice_vote(const Tensor& probs_slice) {
  const int t_count = probs_slice.dim(0);
  const int k = probs_slice.dim(1);
  std::vector<int> votes(static_cast<std::size_t>(k), 0);
  for (int t = 0; t < t_count; ++t) {
    std::span<const float> row{probs_slice.values().data() + static_cast<std::size_t>(t) * k,
                               static_cast<std::size_t>(k)};
    ++votes[static_cast<std::size_t>(argmax_lowest(row))];
  }
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (votes[static_cast<std::size_t>(j)] > votes[static_cast<std::size_t>(best)]) best = j;
  }
  return best;
}

}  // namespace

TrainResult train_loop(SmaNet& model, Adam& adam, const std::vector<SequenceSample>& train,
                       const std::vector<SequenceSample>& val, const TrainConfig& config,
                       int start_epoch, const TrainHooks& hooks) {
  config.validate();
  require<ConfigError>(!train.empty(), "training set is empty");
  const int k = model.config().num_classes;
  for (const SequenceSample& s : train) {
    require<ConfigError>(s.label >= 0 && s.label < k, "training label ", s.label,
                         " out of range for ", k, " classes");
  }

  std::vector<ParamRef> params;
  model.visit_params([&params](const std::string& name, Tensor& t, bool trainable) {
    if (trainable) params.push_back({name, t});
  });

  TrainResult result;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = scheduled_lr(config.learning_rate, config.lr_decay, epoch);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(config.seed, 0x5337 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const int batch = static_cast<int>(end - begin);

      // Stack the batch so backbone batch-norm statistics pool across it.
      const Tensor& first = train[order[begin]].slices;
      const int t_len = first.dim(0);
      std::vector<float> stacked_data;
      stacked_data.reserve(static_cast<std::size_t>(batch) * first.numel());
      for (std::size_t i = begin; i < end; ++i) {
        const SequenceSample& sample = train[order[i]];
        Tensor slices = sample.slices;
        if (config.photometric_jitter) {
          slices = jitter_slices(slices, config.seed, epoch, sample.sequence_id);
        }
        stacked_data.insert(stacked_data.end(), slices.values().begin(),
                            slices.values().end());
      }
      Tensor stacked({batch * t_len, 1, first.dim(2), first.dim(3)}, std::move(stacked_data));

      Tape tape;
      std::vector<SmaNet::SequenceLogits> fwd =
          model.forward_batch(tape, stacked, batch, /*training=*/true);
      Tensor batch_loss;
      for (int b = 0; b < batch; ++b) {
        const SequenceSample& sample = train[order[begin + static_cast<std::size_t>(b)]];
        Tensor l2d = loss_2d(tape, fwd[static_cast<std::size_t>(b)].slice_logits, sample.label);
        Tensor l3d = loss_3d(tape, fwd[static_cast<std::size_t>(b)].seq_logits,
                             fwd[static_cast<std::size_t>(b)].final_logits, sample.label);
        Tensor lsv = loss_sv(tape, l2d, l3d, config.lambda);
        require<NumericError>(std::isfinite(lsv.value_at(0)),
                              "training loss became non-finite at epoch ", epoch);
        loss_sum += static_cast<double>(lsv.value_at(0));
        batch_loss = batch_loss.defined() ? ops::add(tape, batch_loss, lsv) : lsv;
      }
      Tensor scaled = ops::mul_scalar(tape, batch_loss, 1.0f / static_cast<float>(batch));
      tape.backward(scaled);
      adam.step(params, static_cast<float>(lr));
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train.size());
    row.lr = lr;
    if (!val.empty()) {
      row.val_bacc = evaluate(model, val).balanced_acc;
    }
    const bool is_best = row.val_bacc > result.best_val;
    if (is_best) {
      result.best_val = row.val_bacc;
      result.best_epoch = epoch;
    }
    result.rows.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row, is_best);
  }
  return result;
}

Evaluation evaluate(SmaNet& model, const std::vector<SequenceSample>& samples,
                    InferenceMode mode) {
  const int k = model.config().num_classes;
  Evaluation eval{ConfusionMatrix(k), {}, {}, 0.0};
  require<ConfigError>(!samples.empty(), "evaluate needs at least one sample");
  for (const SequenceSample& s : samples) {
    require<ConfigError>(s.label >= 0 && s.label < k, "label ", s.label,
                         " out of range for ", k, " classes");
    require<ConfigError>(s.slices.same_dims(samples.front().slices),
                         "evaluate needs uniformly shaped sequences");
  }
  // Inference over distinct sequences is independent, so chunks share one
  // batched forward; per-sample values are identical to predict().
  constexpr std::size_t kChunk = 8;
  const Tensor& first = samples.front().slices;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    const int batch = static_cast<int>(end - begin);
    std::vector<float> stacked_data;
    stacked_data.reserve(static_cast<std::size_t>(batch) * first.numel());
    for (std::size_t i = begin; i < end; ++i) {
      stacked_data.insert(stacked_data.end(), samples[i].slices.values().begin(),
                          samples[i].slices.values().end());
    }
    Tensor stacked({batch * first.dim(0), 1, first.dim(2), first.dim(3)},
                   std::move(stacked_data));
    Tape tape;
    std::vector<SmaNet::SequenceLogits> fwd =
        model.forward_batch(tape, stacked, batch, /*training=*/false);
    for (int b = 0; b < batch; ++b) {
      Tensor probs_final = ops::softmax(tape, fwd[static_cast<std::size_t>(b)].final_logits);
      int predicted;
      if (mode == InferenceMode::kWeightedEnsemble) {
        predicted = argmax_lowest(probs_final.values());
      } else {
        Tensor probs_slice = ops::softmax(tape, fwd[static_cast<std::size_t>(b)].slice_logits);
        predicted = majority_slice_vote(probs_slice);
      }
      eval.cm.add(samples[begin + static_cast<std::size_t>(b)].label, predicted);
      eval.predictions.push_back(predicted);
      eval.final_probs.emplace_back(probs_final.values().begin(), probs_final.values().end());
    }
  }
  eval.balanced_acc = balanced_accuracy(eval.cm);
  return eval;
}

std::optional<double> evaluation_auc(const Evaluation& eval,
                                     const std::vector<SequenceSample>& samples,
                                     int num_classes) {
  std::vector<ScoredSample> scored;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (num_classes == 3) {
      // narrow (1) vs synechiae (2), scored by the synechiae probability
      if (samples[i].label != 1 && samples[i].label != 2) continue;
      scored.push_back({static_cast<double>(eval.final_probs[i][2]),
                        samples[i].label == 2 ? 1 : 0});
    } else {
      scored.push_back({static_cast<double>(eval.final_probs[i][1]),
                        samples[i].label == 1 ? 1 : 0});
    }
  }
  bool has_pos = false, has_neg = false;
  for (const ScoredSample& s : scored) (s.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) return std::nullopt;
  return roc_auc(scored);
}

}  // namespace smanet
