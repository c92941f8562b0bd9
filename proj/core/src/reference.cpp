#include "smanet/reference.hpp"

#include <algorithm>
#include <cmath>

#include "smanet/common.hpp"

namespace smanet::reference {

void conv2d(const std::vector<double>& in, int n, int cin, int h, int w,
            const std::vector<double>& weight, int cout, int k, const double* bias,
            const ops::ConvSpec& spec, std::vector<double>& out) {
  const int ho = ops::conv_out_extent(h, k, spec);
  const int wo = ops::conv_out_extent(w, k, spec);
  const int cin_g = cin / spec.groups;
  const int cout_g = cout / spec.groups;
  out.assign(static_cast<std::size_t>(n) * cout * ho * wo, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < cout; ++oc) {
      const int g = oc / cout_g;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias ? bias[oc] : 0.0;
          for (int ic = 0; ic < cin_g; ++ic) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
                if (ix < 0 || ix >= w) continue;
                const std::size_t ii =
                    ((static_cast<std::size_t>(b) * cin + g * cin_g + ic) * h + iy) * w + ix;
                const std::size_t wi =
                    ((static_cast<std::size_t>(oc) * cin_g + ic) * k + ky) * k + kx;
                acc += in[ii] * weight[wi];
              }
            }
          }
          out[((static_cast<std::size_t>(b) * cout + oc) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
}

void conv1d(const std::vector<double>& in, int n, int cin, int len,
            const std::vector<double>& weight, int cout, int k, const double* bias,
            const ops::ConvSpec& spec, std::vector<double>& out) {
  const int lo = ops::conv_out_extent(len, k, spec);
  const int cin_g = cin / spec.groups;
  const int cout_g = cout / spec.groups;
  out.assign(static_cast<std::size_t>(n) * cout * lo, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < cout; ++oc) {
      const int g = oc / cout_g;
      for (int ox = 0; ox < lo; ++ox) {
        double acc = bias ? bias[oc] : 0.0;
        for (int ic = 0; ic < cin_g; ++ic) {
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
            if (ix < 0 || ix >= len) continue;
            acc += in[(static_cast<std::size_t>(b) * cin + g * cin_g + ic) * len + ix] *
                   weight[(static_cast<std::size_t>(oc) * cin_g + ic) * k + kx];
          }
        }
        out[(static_cast<std::size_t>(b) * cout + oc) * lo + ox] = acc;
      }
    }
  }
}

void fully_connected(const std::vector<double>& in, int n, int fin,
                     const std::vector<double>& weight, int fout,
                     const std::vector<double>& bias, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(n) * fout, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < fout; ++o) {
      double acc = bias.empty() ? 0.0 : bias[o];
      for (int i = 0; i < fin; ++i) {
        acc += in[static_cast<std::size_t>(b) * fin + i] *
               weight[static_cast<std::size_t>(o) * fin + i];
      }
      out[static_cast<std::size_t>(b) * fout + o] = acc;
    }
  }
}

void batch_norm(const std::vector<double>& in, int n, int c, int h, int w,
                const std::vector<double>& gamma, const std::vector<double>& beta,
                const std::vector<double>& mean, const std::vector<double>& var, bool training,
                double epsilon, std::vector<double>& out) {
  out.resize(in.size());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const double m = static_cast<double>(n) * static_cast<double>(hw);
  for (int ch = 0; ch < c; ++ch) {
    double mu = mean.empty() ? 0.0 : mean[ch];
    double v = var.empty() ? 0.0 : var[ch];
    if (training) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* p = in.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      mu = s / m;
      v = s2 / m - mu * mu;
      if (v < 0.0) v = 0.0;
    }
    const double inv = 1.0 / std::sqrt(v + epsilon);
    for (int b = 0; b < n; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        out[base + i] = (in[base + i] - mu) * inv * gamma[ch] + beta[ch];
      }
    }
  }
}

void global_avg_pool(const std::vector<double>& in, int n, int c, int h, int w,
                     std::vector<double>& out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  out.assign(static_cast<std::size_t>(n) * c, 0.0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      const double* p = in.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      out[static_cast<std::size_t>(b) * c + ch] = s / static_cast<double>(hw);
    }
  }
}

void softmax(const std::vector<double>& logits, int n, int k, std::vector<double>& out) {
  out.resize(logits.size());
  for (int b = 0; b < n; ++b) {
    const double* row = logits.data() + static_cast<std::size_t>(b) * k;
    double* orow = out.data() + static_cast<std::size_t>(b) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < k; ++j) orow[j] /= z;
  }
}

double cross_entropy_with_logits(const std::vector<double>& logits, int n, int k,
                                 const std::vector<int>& targets, bool mean) {
  double total = 0.0;
  for (int b = 0; b < n; ++b) {
    const double* row = logits.data() + static_cast<std::size_t>(b) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[static_cast<std::size_t>(b)]];
  }
  return mean ? total / n : total;
}

}  // namespace smanet::reference
