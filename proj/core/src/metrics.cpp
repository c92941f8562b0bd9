#include "smanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "smanet/common.hpp"

namespace smanet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  require<ConfigError>(num_classes >= 2, "confusion matrix needs at least 2 classes");
  counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::add(int truth, int predicted) {
  require<ConfigError>(truth >= 0 && truth < k_ && predicted >= 0 && predicted < k_,
                       "confusion matrix index out of range: (", truth, ",", predicted, ")");
  ++counts_[static_cast<std::size_t>(truth) * k_ + predicted];
}

std::int64_t ConfusionMatrix::count(int truth, int predicted) const {
  return counts_[static_cast<std::size_t>(truth) * k_ + predicted];
}

std::int64_t ConfusionMatrix::support(int k) const {
  std::int64_t s = 0;
  for (int j = 0; j < k_; ++j) s += count(k, j);
  return s;
}

std::int64_t ConfusionMatrix::predicted(int k) const {
  std::int64_t s = 0;
  for (int i = 0; i < k_; ++i) s += count(i, k);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::int64_t c : counts_) s += c;
  return s;
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int classes = 0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const std::int64_t sup = cm.support(k);
    if (sup == 0) continue;
    sum += static_cast<double>(cm.count(k, k)) / static_cast<double>(sup);
    ++classes;
  }
  require<ConfigError>(classes > 0, "balanced_accuracy on an empty confusion matrix");
  return sum / classes;
}

SenSpe weighted_sen_spe(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.total();
  require<ConfigError>(n > 0, "sen/spe on an empty confusion matrix");
  double sen = 0.0, spe = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const std::int64_t sup = cm.support(k);
    if (sup == 0) continue;
    const double weight = static_cast<double>(sup) / static_cast<double>(n);
    sen += weight * static_cast<double>(cm.count(k, k)) / static_cast<double>(sup);
    const std::int64_t negatives = n - sup;
    if (negatives > 0) {
      const std::int64_t fp = cm.predicted(k) - cm.count(k, k);
      spe += weight * static_cast<double>(negatives - fp) / static_cast<double>(negatives);
    } else {
      spe += weight;  // no negatives to misclassify
    }
  }
  return {sen, spe};
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.total();
  require<ConfigError>(n > 0, "kappa on an empty confusion matrix");
  double po = 0.0, pe = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    po += static_cast<double>(cm.count(k, k));
    pe += static_cast<double>(cm.support(k)) * static_cast<double>(cm.predicted(k));
  }
  po /= static_cast<double>(n);
  pe /= static_cast<double>(n) * static_cast<double>(n);
  if (pe >= 1.0) return 0.0;  // every sample in one cell: agreement equals chance
  return (po - pe) / (1.0 - pe);
}

double weighted_f1(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.total();
  require<ConfigError>(n > 0, "f1 on an empty confusion matrix");
  double f1 = 0.0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const std::int64_t sup = cm.support(k);
    if (sup == 0) continue;
    const std::int64_t pred = cm.predicted(k);
    const double tp = static_cast<double>(cm.count(k, k));
    const double precision = pred > 0 ? tp / static_cast<double>(pred) : 0.0;
    const double recall = tp / static_cast<double>(sup);
    const double class_f1 =
        precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    f1 += static_cast<double>(sup) / static_cast<double>(n) * class_f1;
  }
  return f1;
}

double roc_auc(const std::vector<ScoredSample>& samples) {
  std::int64_t pos = 0, neg = 0;
  for (const ScoredSample& s : samples) {
    require<NumericError>(std::isfinite(s.score), "roc_auc score must be finite");
    if (s.label != 0) {
      ++pos;
    } else {
      ++neg;
    }
  }
  require<ConfigError>(pos > 0 && neg > 0,
                       "roc_auc undefined without both positive and negative samples");
  std::vector<ScoredSample> sorted = samples;
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredSample& a, const ScoredSample& b) { return a.score < b.score; });
  // Win units doubled so ties stay integral: 2 per strict win, 1 per tie.
  std::int64_t win2 = 0;
  std::int64_t neg_below = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    std::int64_t pos_here = 0, neg_here = 0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      if (sorted[j].label != 0) {
        ++pos_here;
      } else {
        ++neg_here;
      }
      ++j;
    }
    win2 += 2 * pos_here * neg_below + pos_here * neg_here;
    neg_below += neg_here;
    i = j;
  }
  // Computed from the smaller half so that auc(samples) + auc(flipped) is
  // exactly 1 in floating point.
  const std::int64_t d2 = 2 * pos * neg;
  const std::int64_t lose2 = d2 - win2;
  if (win2 <= lose2) {
    return static_cast<double>(win2) / static_cast<double>(d2);
  }
  return 1.0 - static_cast<double>(lose2) / static_cast<double>(d2);
}

EvalReport make_report(const ConfusionMatrix& cm, std::optional<double> auc,
                       const std::string& split, int num_classes) {
  EvalReport r;
  r.split = split;
  r.kappa = cohen_kappa(cm);
  r.f1 = weighted_f1(cm);
  r.b_acc = balanced_accuracy(cm);
  const SenSpe ss = weighted_sen_spe(cm);
  r.sen = ss.sensitivity;
  r.spe = ss.specificity;
  r.auc = auc;
  r.auc_key = num_classes == 3 ? "auc_narrow_synechiae" : "auc";
  return r;
}

std::string format_report(const EvalReport& report) {
  char buf[64];
  std::string out;
  out += "split " + report.split + "\n";
  const auto line = [&out, &buf](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s %.6f\n", key, v);
    out += buf;
  };
  line("kappa", report.kappa);
  line("f1", report.f1);
  line("b_acc", report.b_acc);
  line("sen", report.sen);
  line("spe", report.spe);
  if (report.auc) {
    line(report.auc_key.c_str(), *report.auc);
  } else {
    out += report.auc_key + " nan\n";
  }
  return out;
}

}  // namespace smanet
