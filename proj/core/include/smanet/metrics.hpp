#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace smanet {

// K x K counts; rows are the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(int truth, int predicted);
  std::int64_t count(int truth, int predicted) const;
  std::int64_t support(int k) const;    // row sum
  std::int64_t predicted(int k) const;  // column sum
  std::int64_t total() const;
  int num_classes() const { return k_; }

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

// Unweighted mean of per-class recalls; classes with zero support are
// excluded.
double balanced_accuracy(const ConfusionMatrix& cm);

struct SenSpe {
  double sensitivity;
  double specificity;
};

// Support-weighted recall and support-weighted one-vs-rest true-negative
// rate.
SenSpe weighted_sen_spe(const ConfusionMatrix& cm);

// (p_o - p_e) / (1 - p_e); the degenerate p_e = 1 case (a single occupied
// row/column pair) is defined as 0.
double cohen_kappa(const ConfusionMatrix& cm);

// Support-weighted mean of per-class F1; a class with precision+recall = 0
// contributes 0.
double weighted_f1(const ConfusionMatrix& cm);

struct ScoredSample {
  double score;
  int label;  // binary: positive iff nonzero
};

// Mann-Whitney pair statistic: the fraction of (positive, negative) pairs
// ordered correctly, ties counting one half. Requires at least one sample of
// each label.
double roc_auc(const std::vector<ScoredSample>& samples);

struct EvalReport {
  std::string split;
  double kappa = 0.0;
  double f1 = 0.0;
  double b_acc = 0.0;
  double sen = 0.0;
  double spe = 0.0;
  // Narrow-vs-synechiae AUC in three-class mode, plain binary AUC in
  // two-class mode; absent when the relevant classes are missing.
  std::optional<double> auc;
  std::string auc_key = "auc_narrow_synechiae";
};

EvalReport make_report(const ConfusionMatrix& cm, std::optional<double> auc,
                       const std::string& split, int num_classes);

// Key-value lines, numeric values with 6 decimal places.
std::string format_report(const EvalReport& report);

}  // namespace smanet
