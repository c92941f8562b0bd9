#include <algorithm>
#include <cmath>

#include "smanet/common.hpp"
#include "smanet/ops.hpp"
#include "smanet/reference.hpp"

namespace smanet::ops {

namespace {

Tensor unary_out(const Tensor& x) {
  Tensor out(x.dims());
  if (x.requires_grad()) out.set_requires_grad(true);
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require<ShapeError>(a.same_dims(b), "add shape mismatch: ", a.shape_str(), " vs ",
                      b.shape_str());
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.value_at(i) + b.value_at(i);
  if (a.requires_grad() || b.requires_grad()) out.set_requires_grad(true);
  tape.record({"add",
               {a, b},
               out,
               [a, b, out]() {
                 const float* go = out.raw()->grad.data();
                 if (a.requires_grad()) {
                   float* g = a.raw()->grad.data();
                   for (std::size_t i = 0; i < a.numel(); ++i) g[i] += go[i];
                 }
                 if (b.requires_grad()) {
                   float* g = b.raw()->grad.data();
                   for (std::size_t i = 0; i < b.numel(); ++i) g[i] += go[i];
                 }
               },
               [a, b, out](ReplayValues& vals) {
                 const auto& av = vals.at(a);
                 const auto& bv = vals.at(b);
                 auto& ov = vals.slot(out);
                 ov.resize(av.size());
                 for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
               }});
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require<ShapeError>(a.same_dims(b), "mul shape mismatch: ", a.shape_str(), " vs ",
                      b.shape_str());
  Tensor out(a.dims());
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.value_at(i) * b.value_at(i);
  if (a.requires_grad() || b.requires_grad()) out.set_requires_grad(true);
  tape.record({"mul",
               {a, b},
               out,
               [a, b, out]() {
                 const float* go = out.raw()->grad.data();
                 const float* av = a.values().data();
                 const float* bv = b.values().data();
                 if (a.requires_grad()) {
                   float* g = a.raw()->grad.data();
                   for (std::size_t i = 0; i < a.numel(); ++i) g[i] += go[i] * bv[i];
                 }
                 if (b.requires_grad()) {
                   float* g = b.raw()->grad.data();
                   for (std::size_t i = 0; i < b.numel(); ++i) g[i] += go[i] * av[i];
                 }
               },
               [a, b, out](ReplayValues& vals) {
                 const auto& av = vals.at(a);
                 const auto& bv = vals.at(b);
                 auto& ov = vals.slot(out);
                 ov.resize(av.size());
                 for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
               }});
  return out;
}

Tensor add_scalar(Tape& tape, const Tensor& a, float c) {
  Tensor out = unary_out(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.value_at(i) + c;
  tape.record({"add_scalar",
               {a},
               out,
               [a, out]() {
                 if (!a.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 float* g = a.raw()->grad.data();
                 for (std::size_t i = 0; i < a.numel(); ++i) g[i] += go[i];
               },
               [a, out, c](ReplayValues& vals) {
                 const auto& av = vals.at(a);
                 auto& ov = vals.slot(out);
                 ov.resize(av.size());
                 for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + c;
               }});
  return out;
}

Tensor mul_scalar(Tape& tape, const Tensor& a, float c) {
  Tensor out = unary_out(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = a.value_at(i) * c;
  tape.record({"mul_scalar",
               {a},
               out,
               [a, out, c]() {
                 if (!a.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 float* g = a.raw()->grad.data();
                 for (std::size_t i = 0; i < a.numel(); ++i) g[i] += go[i] * c;
               },
               [a, out, c](ReplayValues& vals) {
                 const auto& av = vals.at(a);
                 auto& ov = vals.slot(out);
                 ov.resize(av.size());
                 for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
               }});
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = unary_out(x);
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::max(0.0f, x.value_at(i));
  tape.record({"relu",
               {x},
               out,
               [x, out]() {
                 if (!x.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 const float* xv = x.values().data();
                 float* g = x.raw()->grad.data();
                 // subgradient 0 at the kink
                 for (std::size_t i = 0; i < x.numel(); ++i) {
                   if (xv[i] > 0.0f) g[i] += go[i];
                 }
               },
               [x, out](ReplayValues& vals) {
                 const auto& xv = vals.at(x);
                 auto& ov = vals.slot(out);
                 ov.resize(xv.size());
                 for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
               }});
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out = unary_out(x);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out.at(i) = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x.value_at(i)))));
  }
  tape.record({"sigmoid",
               {x},
               out,
               [x, out]() {
                 if (!x.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 const float* s = out.values().data();
                 float* g = x.raw()->grad.data();
                 for (std::size_t i = 0; i < x.numel(); ++i) g[i] += go[i] * s[i] * (1.0f - s[i]);
               },
               [x, out](ReplayValues& vals) {
                 const auto& xv = vals.at(x);
                 auto& ov = vals.slot(out);
                 ov.resize(xv.size());
                 for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-xv[i]));
               }});
  return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
  Tensor out = unary_out(x);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out.at(i) = static_cast<float>(std::tanh(static_cast<double>(x.value_at(i))));
  }
  tape.record({"tanh",
               {x},
               out,
               [x, out]() {
                 if (!x.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 const float* t = out.values().data();
                 float* g = x.raw()->grad.data();
                 for (std::size_t i = 0; i < x.numel(); ++i) g[i] += go[i] * (1.0f - t[i] * t[i]);
               },
               [x, out](ReplayValues& vals) {
                 const auto& xv = vals.at(x);
                 auto& ov = vals.slot(out);
                 ov.resize(xv.size());
                 for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::tanh(xv[i]);
               }});
  return out;
}

Tensor batch_norm(Tape& tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, float momentum, float epsilon) {
  require<ShapeError>(input.rank() == 4, "batch_norm input must be [N,C,H,W], got ",
                      input.shape_str());
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require<ShapeError>(gamma.rank() == 1 && gamma.dim(0) == c && beta.same_dims(gamma),
                      "batch_norm gamma/beta must be [", c, "]");
  require<ShapeError>(state.running_mean.dim(0) == c && state.running_var.dim(0) == c,
                      "batch_norm running stats must be [", c, "]");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const double m = static_cast<double>(n) * static_cast<double>(hw);
  require<ConfigError>(!training || m >= 2.0,
                       "batch_norm needs at least 2 elements per channel in training mode");

  // Statistics actually used for normalization, per channel.
  std::vector<double> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* p = input.values().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mu = s / m;
      double var = s2 / m - mu * mu;
      if (var < 0.0) var = 0.0;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + epsilon);
      float& rm = state.running_mean.at(static_cast<std::size_t>(ch));
      float& rv = state.running_var.at(static_cast<std::size_t>(ch));
      rm = static_cast<float>((1.0 - momentum) * rm + momentum * mu);
      rv = static_cast<float>((1.0 - momentum) * rv + momentum * var);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean.value_at(static_cast<std::size_t>(ch));
      inv_std[ch] =
          1.0 / std::sqrt(static_cast<double>(
                              state.running_var.value_at(static_cast<std::size_t>(ch))) +
                          epsilon);
    }
  }

  Tensor out({n, c, h, w});
  {
    const float* iv = input.values().data();
    float* ov = out.values().data();
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
        const double g = gamma.value_at(static_cast<std::size_t>(ch));
        const double bt = beta.value_at(static_cast<std::size_t>(ch));
        for (std::size_t i = 0; i < hw; ++i) {
          ov[base + i] = static_cast<float>((iv[base + i] - mean[ch]) * inv_std[ch] * g + bt);
        }
      }
    }
  }

  if (input.requires_grad() || gamma.requires_grad() || beta.requires_grad()) {
    out.set_requires_grad(true);
  }
  // Snapshot for eval-mode replay; training replay recomputes statistics so
  // the finite-difference path differentiates through them.
  std::vector<double> snap_mean = mean;
  std::vector<double> snap_var(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) snap_var[ch] = 1.0 / (inv_std[ch] * inv_std[ch]) - epsilon;
  tape.record(
      {"batch_norm",
       {input, gamma, beta},
       out,
       [input, gamma, beta, out, mean, inv_std, training, n, c, h, w]() {
         const std::size_t hw = static_cast<std::size_t>(h) * w;
         const double m = static_cast<double>(n) * static_cast<double>(hw);
         const float* iv = input.values().data();
         const float* go = out.raw()->grad.data();
         for (int ch = 0; ch < c; ++ch) {
           const double mu = mean[static_cast<std::size_t>(ch)];
           const double is = inv_std[static_cast<std::size_t>(ch)];
           const double g = gamma.value_at(static_cast<std::size_t>(ch));
           double sum_g = 0.0, sum_gx = 0.0;
           for (int b = 0; b < n; ++b) {
             const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
             for (std::size_t i = 0; i < hw; ++i) {
               const double xh = (iv[base + i] - mu) * is;
               sum_g += go[base + i];
               sum_gx += go[base + i] * xh;
             }
           }
           if (gamma.requires_grad()) {
             gamma.raw()->grad[static_cast<std::size_t>(ch)] += static_cast<float>(sum_gx);
           }
           if (beta.requires_grad()) {
             beta.raw()->grad[static_cast<std::size_t>(ch)] += static_cast<float>(sum_g);
           }
           if (input.requires_grad()) {
             float* gi = input.raw()->grad.data();
             for (int b = 0; b < n; ++b) {
               const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
               for (std::size_t i = 0; i < hw; ++i) {
                 double d;
                 if (training) {
                   const double xh = (iv[base + i] - mu) * is;
                   d = g * is * (go[base + i] - sum_g / m - xh * sum_gx / m);
                 } else {
                   d = g * is * go[base + i];
                 }
                 gi[base + i] += static_cast<float>(d);
               }
             }
           }
         }
       },
       [input, gamma, beta, out, snap_mean, snap_var, training, epsilon, n, c, h,
        w](ReplayValues& vals) {
         reference::batch_norm(vals.at(input), n, c, h, w, vals.at(gamma), vals.at(beta),
                               snap_mean, snap_var, training, epsilon, vals.slot(out));
       }});
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& input) {
  require<ShapeError>(input.rank() == 4, "global_avg_pool input must be [N,C,H,W], got ",
                      input.shape_str());
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({n, c});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      const float* p = input.values().data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      out.at(static_cast<std::size_t>(b) * c + ch) =
          static_cast<float>(s / static_cast<double>(hw));
    }
  }
  if (input.requires_grad()) out.set_requires_grad(true);
  tape.record({"global_avg_pool",
               {input},
               out,
               [input, out, n, c, hw]() {
                 if (!input.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 float* gi = input.raw()->grad.data();
                 const float scale = 1.0f / static_cast<float>(hw);
                 for (int b = 0; b < n; ++b) {
                   for (int ch = 0; ch < c; ++ch) {
                     const float g = go[static_cast<std::size_t>(b) * c + ch] * scale;
                     float* p = gi + (static_cast<std::size_t>(b) * c + ch) * hw;
                     for (std::size_t i = 0; i < hw; ++i) p[i] += g;
                   }
                 }
               },
               [input, out, n, c](ReplayValues& vals) {
                 const int h = input.dim(2), w = input.dim(3);
                 reference::global_avg_pool(vals.at(input), n, c, h, w, vals.slot(out));
               }});
  return out;
}

Tensor softmax(Tape& tape, const Tensor& logits) {
  require<ShapeError>(logits.rank() == 2, "softmax expects [N,K], got ", logits.shape_str());
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor out({n, k});
  for (int b = 0; b < n; ++b) {
    const float* row = logits.values().data() + static_cast<std::size_t>(b) * k;
    float* orow = out.values().data() + static_cast<std::size_t>(b) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    std::vector<double> e(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      e[j] = std::exp(row[j] - mx);
      z += e[j];
    }
    for (int j = 0; j < k; ++j) orow[j] = static_cast<float>(e[j] / z);
  }
  if (logits.requires_grad()) out.set_requires_grad(true);
  tape.record({"softmax",
               {logits},
               out,
               [logits, out, n, k]() {
                 if (!logits.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 const float* p = out.values().data();
                 float* gl = logits.raw()->grad.data();
                 for (int b = 0; b < n; ++b) {
                   const std::size_t base = static_cast<std::size_t>(b) * k;
                   double dot = 0.0;
                   for (int j = 0; j < k; ++j) dot += static_cast<double>(go[base + j]) * p[base + j];
                   for (int j = 0; j < k; ++j) {
                     gl[base + j] +=
                         static_cast<float>(p[base + j] * (go[base + j] - dot));
                   }
                 }
               },
               [logits, out, n, k](ReplayValues& vals) {
                 reference::softmax(vals.at(logits), n, k, vals.slot(out));
               }});
  return out;
}

Tensor cross_entropy_with_logits(Tape& tape, const Tensor& logits,
                                 const std::vector<int>& targets, Reduction reduction) {
  require<ShapeError>(logits.rank() == 2, "cross_entropy expects [N,K] logits, got ",
                      logits.shape_str());
  const int n = logits.dim(0), k = logits.dim(1);
  require<ShapeError>(static_cast<int>(targets.size()) == n, "cross_entropy got ",
                      targets.size(), " targets for ", n, " rows");
  for (int t : targets) {
    require<ConfigError>(t >= 0 && t < k, "cross_entropy target ", t, " out of range [0,", k,
                         ")");
  }
  const bool mean = reduction == Reduction::Mean;
  // Save the probabilities for the backward rule.
  std::vector<float> probs(logits.numel());
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const float* row = logits.values().data() + static_cast<std::size_t>(b) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < k; ++j) {
      probs[static_cast<std::size_t>(b) * k + j] = static_cast<float>(std::exp(row[j] - lse));
    }
    total += lse - row[targets[static_cast<std::size_t>(b)]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(mean ? total / n : total));
  if (logits.requires_grad()) out.set_requires_grad(true);
  std::vector<int> tgts = targets;
  tape.record({"cross_entropy",
               {logits},
               out,
               [logits, out, probs, tgts, mean, n, k]() {
                 if (!logits.requires_grad()) return;
                 const float g = out.raw()->grad[0] * (mean ? 1.0f / n : 1.0f);
                 float* gl = logits.raw()->grad.data();
                 for (int b = 0; b < n; ++b) {
                   const std::size_t base = static_cast<std::size_t>(b) * k;
                   for (int j = 0; j < k; ++j) {
                     const float onehot = j == tgts[static_cast<std::size_t>(b)] ? 1.0f : 0.0f;
                     gl[base + j] += g * (probs[base + j] - onehot);
                   }
                 }
               },
               [logits, out, tgts, mean, n, k](ReplayValues& vals) {
                 auto& ov = vals.slot(out);
                 ov.assign(1, reference::cross_entropy_with_logits(vals.at(logits), n, k, tgts,
                                                                   mean));
               }});
  return out;
}

SoftmaxXent softmax_cross_entropy(Tape& tape, const Tensor& logits,
                                  const std::vector<int>& targets) {
  SoftmaxXent r;
  r.loss = cross_entropy_with_logits(tape, logits, targets, Reduction::Mean);
  r.probs = softmax(tape, logits);
  return r;
}

Tensor channel_scale(Tape& tape, const Tensor& u, const Tensor& s) {
  require<ShapeError>(u.rank() == 4, "channel_scale expects [N,C,H,W], got ", u.shape_str());
  const int n = u.dim(0), c = u.dim(1), h = u.dim(2), w = u.dim(3);
  require<ShapeError>(s.rank() == 2 && s.dim(0) == n && s.dim(1) == c,
                      "channel_scale scales must be [", n, ",", c, "], got ", s.shape_str());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out(u.dims());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float sc = s.value_at(static_cast<std::size_t>(b) * c + ch);
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out.at(base + i) = u.value_at(base + i) * sc;
    }
  }
  if (u.requires_grad() || s.requires_grad()) out.set_requires_grad(true);
  tape.record({"channel_scale",
               {u, s},
               out,
               [u, s, out, n, c, hw]() {
                 const float* go = out.raw()->grad.data();
                 const float* uv = u.values().data();
                 const float* sv = s.values().data();
                 for (int b = 0; b < n; ++b) {
                   for (int ch = 0; ch < c; ++ch) {
                     const std::size_t sidx = static_cast<std::size_t>(b) * c + ch;
                     const std::size_t base = sidx * hw;
                     if (u.requires_grad()) {
                       float* gu = u.raw()->grad.data();
                       for (std::size_t i = 0; i < hw; ++i) {
                         gu[base + i] += go[base + i] * sv[sidx];
                       }
                     }
                     if (s.requires_grad()) {
                       double acc = 0.0;
                       for (std::size_t i = 0; i < hw; ++i) {
                         acc += static_cast<double>(go[base + i]) * uv[base + i];
                       }
                       s.raw()->grad[sidx] += static_cast<float>(acc);
                     }
                   }
                 }
               },
               [u, s, out, n, c, hw](ReplayValues& vals) {
                 const auto& uv = vals.at(u);
                 const auto& sv = vals.at(s);
                 auto& ov = vals.slot(out);
                 ov.resize(uv.size());
                 for (int b = 0; b < n; ++b) {
                   for (int ch = 0; ch < c; ++ch) {
                     const std::size_t sidx = static_cast<std::size_t>(b) * c + ch;
                     const std::size_t base = sidx * hw;
                     for (std::size_t i = 0; i < hw; ++i) ov[base + i] = uv[base + i] * sv[sidx];
                   }
                 }
               }});
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, int start, int count) {
  require<ShapeError>(start >= 0 && count >= 1 && start + count <= x.dim(0), "slice_rows [",
                      start, ",", start + count, ") out of range for ", x.shape_str());
  std::vector<int> dims = x.dims();
  dims[0] = count;
  const std::size_t block = x.numel() / static_cast<std::size_t>(x.dim(0));
  const std::size_t off = static_cast<std::size_t>(start) * block;
  const std::size_t len = static_cast<std::size_t>(count) * block;
  Tensor out(dims);
  for (std::size_t i = 0; i < len; ++i) out.at(i) = x.value_at(off + i);
  if (x.requires_grad()) out.set_requires_grad(true);
  tape.record({"slice_rows",
               {x},
               out,
               [x, out, off, len]() {
                 if (!x.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 float* g = x.raw()->grad.data();
                 for (std::size_t i = 0; i < len; ++i) g[off + i] += go[i];
               },
               [x, out, off, len](ReplayValues& vals) {
                 const auto& xv = vals.at(x);
                 auto& ov = vals.slot(out);
                 ov.assign(xv.begin() + static_cast<std::ptrdiff_t>(off),
                           xv.begin() + static_cast<std::ptrdiff_t>(off + len));
               }});
  return out;
}

Tensor select_batch(Tape& tape, const Tensor& x, int index) {
  return slice_rows(tape, x, index, 1);
}

Tensor concat_batch(Tape& tape, const std::vector<Tensor>& parts) {
  require<ShapeError>(!parts.empty(), "concat_batch needs at least one part");
  std::vector<int> dims = parts[0].dims();
  int total = 0;
  for (const Tensor& p : parts) {
    require<ShapeError>(p.rank() == static_cast<int>(dims.size()),
                        "concat_batch rank mismatch");
    for (int d = 1; d < p.rank(); ++d) {
      require<ShapeError>(p.dim(d) == dims[static_cast<std::size_t>(d)],
                          "concat_batch trailing dims mismatch: ", p.shape_str());
    }
    total += p.dim(0);
  }
  dims[0] = total;
  Tensor out(dims);
  bool needs = false;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < p.numel(); ++i) out.at(off + i) = p.value_at(i);
    off += p.numel();
    needs = needs || p.requires_grad();
  }
  if (needs) out.set_requires_grad(true);
  std::vector<Tensor> ins = parts;
  tape.record({"concat_batch",
               ins,
               out,
               [ins, out]() {
                 const float* go = out.raw()->grad.data();
                 std::size_t off = 0;
                 for (const Tensor& p : ins) {
                   if (p.requires_grad()) {
                     float* g = p.raw()->grad.data();
                     for (std::size_t i = 0; i < p.numel(); ++i) g[i] += go[off + i];
                   }
                   off += p.numel();
                 }
               },
               [ins, out](ReplayValues& vals) {
                 auto& ov = vals.slot(out);
                 ov.resize(out.numel());
                 std::size_t off = 0;
                 for (const Tensor& p : ins) {
                   const auto& pv = vals.at(p);
                   std::copy(pv.begin(), pv.end(), ov.begin() + static_cast<std::ptrdiff_t>(off));
                   off += pv.size();
                 }
               }});
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> dims) {
  const std::size_t n = checked_numel(dims);
  require<ShapeError>(n == x.numel(), "reshape cannot view ", x.shape_str(), " as ", n,
                      " elements");
  Tensor out(std::move(dims));
  for (std::size_t i = 0; i < n; ++i) out.at(i) = x.value_at(i);
  if (x.requires_grad()) out.set_requires_grad(true);
  tape.record({"reshape",
               {x},
               out,
               [x, out]() {
                 if (!x.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 float* g = x.raw()->grad.data();
                 for (std::size_t i = 0; i < x.numel(); ++i) g[i] += go[i];
               },
               [x, out](ReplayValues& vals) { vals.slot(out) = vals.at(x); }});
  return out;
}

Tensor transpose2d(Tape& tape, const Tensor& x) {
  require<ShapeError>(x.rank() == 2, "transpose2d expects rank 2, got ", x.shape_str());
  const int a = x.dim(0), b = x.dim(1);
  Tensor out({b, a});
  for (int i = 0; i < a; ++i) {
    for (int j = 0; j < b; ++j) {
      out.at(static_cast<std::size_t>(j) * a + i) = x.value_at(static_cast<std::size_t>(i) * b + j);
    }
  }
  if (x.requires_grad()) out.set_requires_grad(true);
  tape.record({"transpose2d",
               {x},
               out,
               [x, out, a, b]() {
                 if (!x.requires_grad()) return;
                 const float* go = out.raw()->grad.data();
                 float* g = x.raw()->grad.data();
                 for (int i = 0; i < a; ++i) {
                   for (int j = 0; j < b; ++j) {
                     g[static_cast<std::size_t>(i) * b + j] +=
                         go[static_cast<std::size_t>(j) * a + i];
                   }
                 }
               },
               [x, out, a, b](ReplayValues& vals) {
                 const auto& xv = vals.at(x);
                 auto& ov = vals.slot(out);
                 ov.resize(xv.size());
                 for (int i = 0; i < a; ++i) {
                   for (int j = 0; j < b; ++j) {
                     ov[static_cast<std::size_t>(j) * a + i] = xv[static_cast<std::size_t>(i) * b + j];
                   }
                 }
               }});
  return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x.value_at(i);
  Tensor out = Tensor::scalar(static_cast<float>(s));
  if (x.requires_grad()) out.set_requires_grad(true);
  tape.record({"sum_all",
               {x},
               out,
               [x, out]() {
                 if (!x.requires_grad()) return;
                 const float g = out.raw()->grad[0];
                 float* gx = x.raw()->grad.data();
                 for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
               },
               [x, out](ReplayValues& vals) {
                 const auto& xv = vals.at(x);
                 double s = 0.0;
                 for (double v : xv) s += v;
                 vals.slot(out).assign(1, s);
               }});
  return out;
}

}  // namespace smanet::ops
