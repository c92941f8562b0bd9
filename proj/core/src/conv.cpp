#include <cmath>

#include "smanet/common.hpp"
#include "smanet/ops.hpp"
#include "smanet/reference.hpp"

namespace smanet::ops {

int conv_out_extent(int in, int kernel, const ConvSpec& spec) {
  return (in + 2 * spec.padding - spec.dilation * (kernel - 1) - 1) / spec.stride + 1;
}

namespace {

void check_spec(const ConvSpec& spec) {
  require<ConfigError>(spec.stride >= 1 && spec.dilation >= 1 && spec.groups >= 1 &&
                           spec.padding >= 0,
                       "conv spec fields out of range (stride ", spec.stride, ", padding ",
                       spec.padding, ", dilation ", spec.dilation, ", groups ", spec.groups, ")");
}

// Output positions ox for which 0 <= ox*stride + offset < extent_in.
struct TapRange {
  int lo, hi;
};

TapRange tap_range(int extent_in, int extent_out, int stride, int offset) {
  TapRange r;
  r.lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int hi_num = extent_in - 1 - offset;
  r.hi = hi_num < 0 ? -1 : hi_num / stride;
  if (r.hi > extent_out - 1) r.hi = extent_out - 1;
  return r;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, const ConvSpec& spec) {
  check_spec(spec);
  require<ShapeError>(input.rank() == 4, "conv2d input must be [N,C,H,W], got ",
                      input.shape_str());
  require<ShapeError>(weight.rank() == 4 && weight.dim(2) == weight.dim(3),
                      "conv2d weight must be [Cout,Cin/groups,k,k], got ", weight.shape_str());
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  require<ShapeError>(cin % spec.groups == 0 && cout % spec.groups == 0,
                      "conv2d groups ", spec.groups, " must divide channels (Cin ", cin,
                      ", Cout ", cout, ")");
  const int cin_g = cin / spec.groups;
  const int cout_g = cout / spec.groups;
  require<ShapeError>(weight.dim(1) == cin_g, "conv2d weight expects Cin/groups=", cin_g,
                      ", got ", weight.dim(1));
  if (bias) {
    require<ShapeError>(bias->rank() == 1 && bias->dim(0) == cout, "conv2d bias must be [",
                        cout, "], got ", bias->shape_str());
  }
  const int ho = conv_out_extent(h, k, spec);
  const int wo = conv_out_extent(w, k, spec);
  require<ConfigError>(ho >= 1 && wo >= 1, "conv2d output would be empty for input ",
                       input.shape_str(), " with kernel ", k);

  Tensor out({n, cout, ho, wo});
  {
    const float* iv = input.values().data();
    const float* wv = weight.values().data();
    const float* bv = bias ? bias->values().data() : nullptr;
    float* ov = out.values().data();
    // Zero-padded copy of one sample's channels removes every bounds check
    // from the inner loops.
    const int hp = h + 2 * spec.padding;
    const int wp = w + 2 * spec.padding;
    std::vector<float> padded(static_cast<std::size_t>(cin) * hp * wp, 0.0f);
    std::vector<double> scratch(static_cast<std::size_t>(ho) * wo);
    for (int b = 0; b < n; ++b) {
      for (int ic = 0; ic < cin; ++ic) {
        const float* src = iv + (static_cast<std::size_t>(b) * cin + ic) *
                                    static_cast<std::size_t>(h) * w;
        float* dst = padded.data() + static_cast<std::size_t>(ic) * hp * wp +
                     static_cast<std::size_t>(spec.padding) * wp + spec.padding;
        for (int y = 0; y < h; ++y) {
          std::copy(src + static_cast<std::size_t>(y) * w, src + static_cast<std::size_t>(y + 1) * w,
                    dst + static_cast<std::size_t>(y) * wp);
        }
      }
      for (int oc = 0; oc < cout; ++oc) {
        const int g = oc / cout_g;
        std::fill(scratch.begin(), scratch.end(), bv ? static_cast<double>(bv[oc]) : 0.0);
        for (int ic = 0; ic < cin_g; ++ic) {
          const float* iplane = padded.data() +
                                (static_cast<std::size_t>(g) * cin_g + ic) *
                                    static_cast<std::size_t>(hp) * wp;
          const float* wplane = wv + (static_cast<std::size_t>(oc) * cin_g + ic) *
                                         static_cast<std::size_t>(k) * k;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const double wt = wplane[ky * k + kx];
              const float* base = iplane + static_cast<std::size_t>(ky) * spec.dilation * wp +
                                  static_cast<std::size_t>(kx) * spec.dilation;
              for (int oy = 0; oy < ho; ++oy) {
                const float* irow = base + static_cast<std::size_t>(oy) * spec.stride * wp;
                double* srow = scratch.data() + static_cast<std::size_t>(oy) * wo;
                if (spec.stride == 1) {
                  for (int ox = 0; ox < wo; ++ox) srow[ox] += wt * irow[ox];
                } else {
                  for (int ox = 0; ox < wo; ++ox) {
                    srow[ox] += wt * irow[static_cast<std::size_t>(ox) * spec.stride];
                  }
                }
              }
            }
          }
        }
        float* oplane = ov + (static_cast<std::size_t>(b) * cout + oc) *
                                 static_cast<std::size_t>(ho) * wo;
        for (std::size_t i = 0; i < scratch.size(); ++i) {
          oplane[i] = static_cast<float>(scratch[i]);
        }
      }
    }
  }

  if (input.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad())) {
    out.set_requires_grad(true);
  }
  Tensor bias_t = bias ? *bias : Tensor();
  std::vector<Tensor> node_inputs = {input, weight};
  if (bias) node_inputs.push_back(*bias);
  tape.record(
      {"conv2d", std::move(node_inputs), out,
       [input, weight, bias_t, out, spec, n, cin, h, w, cout, k, cin_g, cout_g, ho, wo]() {
         const float* iv = input.values().data();
         const float* wv = weight.values().data();
         const float* go = out.raw()->grad.data();
         const bool need_in = input.requires_grad();
         const bool need_w = weight.requires_grad();
         const bool need_b = bias_t.defined() && bias_t.requires_grad();
         const int hp = h + 2 * spec.padding;
         const int wp = w + 2 * spec.padding;
         const std::size_t plane = static_cast<std::size_t>(hp) * wp;
         std::vector<float> padded(need_w ? static_cast<std::size_t>(cin) * plane : 0, 0.0f);
         std::vector<double> gin_pad(need_in ? static_cast<std::size_t>(cin) * plane : 0);
         std::vector<double> gw(need_w ? weight.numel() : 0, 0.0);
         std::vector<double> gb(need_b ? static_cast<std::size_t>(cout) : 0, 0.0);
         for (int b = 0; b < n; ++b) {
           if (need_w) {
             for (int ic = 0; ic < cin; ++ic) {
               const float* src = iv + (static_cast<std::size_t>(b) * cin + ic) *
                                          static_cast<std::size_t>(h) * w;
               float* dst = padded.data() + static_cast<std::size_t>(ic) * plane +
                            static_cast<std::size_t>(spec.padding) * wp + spec.padding;
               for (int y = 0; y < h; ++y) {
                 std::copy(src + static_cast<std::size_t>(y) * w,
                           src + static_cast<std::size_t>(y + 1) * w,
                           dst + static_cast<std::size_t>(y) * wp);
               }
             }
           }
           if (need_in) std::fill(gin_pad.begin(), gin_pad.end(), 0.0);
           for (int oc = 0; oc < cout; ++oc) {
             const int g = oc / cout_g;
             const float* goplane = go + (static_cast<std::size_t>(b) * cout + oc) *
                                            static_cast<std::size_t>(ho) * wo;
             if (need_b) {
               double s = 0.0;
               for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) {
                 s += goplane[i];
               }
               gb[oc] += s;
             }
             for (int ic = 0; ic < cin_g; ++ic) {
               const std::size_t pbase = (static_cast<std::size_t>(g) * cin_g + ic) * plane;
               const std::size_t wbase = (static_cast<std::size_t>(oc) * cin_g + ic) *
                                         static_cast<std::size_t>(k) * k;
               for (int ky = 0; ky < k; ++ky) {
                 for (int kx = 0; kx < k; ++kx) {
                   const double wt = wv[wbase + static_cast<std::size_t>(ky) * k + kx];
                   const std::size_t tap = pbase +
                                           static_cast<std::size_t>(ky) * spec.dilation * wp +
                                           static_cast<std::size_t>(kx) * spec.dilation;
                   double gw_acc = 0.0;
                   for (int oy = 0; oy < ho; ++oy) {
                     const float* gorow = goplane + static_cast<std::size_t>(oy) * wo;
                     const std::size_t row = tap + static_cast<std::size_t>(oy) * spec.stride * wp;
                     if (spec.stride == 1) {
                       double* gin_row = gin_pad.data() + row;
                       const float* pad_row = padded.data() + row;
                       if (need_in && need_w) {
                         for (int ox = 0; ox < wo; ++ox) {
                           const double g_out = gorow[ox];
                           gin_row[ox] += g_out * wt;
                           gw_acc += g_out * static_cast<double>(pad_row[ox]);
                         }
                       } else if (need_in) {
                         for (int ox = 0; ox < wo; ++ox) {
                           gin_row[ox] += static_cast<double>(gorow[ox]) * wt;
                         }
                       } else if (need_w) {
                         for (int ox = 0; ox < wo; ++ox) {
                           gw_acc += static_cast<double>(gorow[ox]) * pad_row[ox];
                         }
                       }
                     } else if (need_in && need_w) {
                       for (int ox = 0; ox < wo; ++ox) {
                         const std::size_t at = row + static_cast<std::size_t>(ox) * spec.stride;
                         const double g_out = gorow[ox];
                         gin_pad[at] += g_out * wt;
                         gw_acc += g_out * static_cast<double>(padded[at]);
                       }
                     } else if (need_in) {
                       for (int ox = 0; ox < wo; ++ox) {
                         gin_pad[row + static_cast<std::size_t>(ox) * spec.stride] +=
                             static_cast<double>(gorow[ox]) * wt;
                       }
                     } else if (need_w) {
                       for (int ox = 0; ox < wo; ++ox) {
                         gw_acc += static_cast<double>(gorow[ox]) *
                                   padded[row + static_cast<std::size_t>(ox) * spec.stride];
                       }
                     }
                   }
                   if (need_w) gw[wbase + static_cast<std::size_t>(ky) * k + kx] += gw_acc;
                 }
               }
             }
           }
           if (need_in) {
             float* gin = input.raw()->grad.data();
             for (int ic = 0; ic < cin; ++ic) {
               const double* src = gin_pad.data() + static_cast<std::size_t>(ic) * plane +
                                   static_cast<std::size_t>(spec.padding) * wp + spec.padding;
               float* dst = gin + (static_cast<std::size_t>(b) * cin + ic) *
                                      static_cast<std::size_t>(h) * w;
               for (int y = 0; y < h; ++y) {
                 for (int x = 0; x < w; ++x) {
                   dst[static_cast<std::size_t>(y) * w + x] +=
                       static_cast<float>(src[static_cast<std::size_t>(y) * wp + x]);
                 }
               }
             }
           }
         }
         if (need_w) {
           float* g = weight.raw()->grad.data();
           for (std::size_t i = 0; i < gw.size(); ++i) g[i] += static_cast<float>(gw[i]);
         }
         if (need_b) {
           float* g = bias_t.raw()->grad.data();
           for (std::size_t i = 0; i < gb.size(); ++i) g[i] += static_cast<float>(gb[i]);
         }
       },
       [input, weight, bias_t, out, spec, n, cin, h, w, cout, k](ReplayValues& vals) {
         const std::vector<double>* bd = nullptr;
         if (bias_t.defined()) bd = &vals.at(bias_t);
         reference::conv2d(vals.at(input), n, cin, h, w, vals.at(weight), cout, k,
                           bd ? bd->data() : nullptr, spec, vals.slot(out));
       }});
  return out;
}

Tensor conv1d(Tape& tape, const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, const ConvSpec& spec) {
  check_spec(spec);
  require<ShapeError>(input.rank() == 3, "conv1d input must be [N,C,L], got ",
                      input.shape_str());
  require<ShapeError>(weight.rank() == 3, "conv1d weight must be [Cout,Cin/groups,k], got ",
                      weight.shape_str());
  const int n = input.dim(0), cin = input.dim(1), len = input.dim(2);
  const int cout = weight.dim(0), k = weight.dim(2);
  require<ShapeError>(cin % spec.groups == 0 && cout % spec.groups == 0,
                      "conv1d groups ", spec.groups, " must divide channels (Cin ", cin,
                      ", Cout ", cout, ")");
  const int cin_g = cin / spec.groups;
  const int cout_g = cout / spec.groups;
  require<ShapeError>(weight.dim(1) == cin_g, "conv1d weight expects Cin/groups=", cin_g,
                      ", got ", weight.dim(1));
  if (bias) {
    require<ShapeError>(bias->rank() == 1 && bias->dim(0) == cout, "conv1d bias must be [",
                        cout, "], got ", bias->shape_str());
  }
  const int lo = conv_out_extent(len, k, spec);
  require<ConfigError>(lo >= 1, "conv1d output would be empty for input ", input.shape_str(),
                       " with kernel ", k);

  Tensor out({n, cout, lo});
  {
    const float* iv = input.values().data();
    const float* wv = weight.values().data();
    const float* bv = bias ? bias->values().data() : nullptr;
    float* ov = out.values().data();
    std::vector<double> scratch;
    for (int b = 0; b < n; ++b) {
      for (int oc = 0; oc < cout; ++oc) {
        const int g = oc / cout_g;
        scratch.assign(static_cast<std::size_t>(lo), bv ? static_cast<double>(bv[oc]) : 0.0);
        for (int ic = 0; ic < cin_g; ++ic) {
          const float* iline = iv + (static_cast<std::size_t>(b) * cin + g * cin_g + ic) * len;
          const float* wline = wv + (static_cast<std::size_t>(oc) * cin_g + ic) * k;
          for (int kx = 0; kx < k; ++kx) {
            const int xoff = kx * spec.dilation - spec.padding;
            const TapRange rx = tap_range(len, lo, spec.stride, xoff);
            const double wt = wline[kx];
            int ix = rx.lo * spec.stride + xoff;
            for (int ox = rx.lo; ox <= rx.hi; ++ox, ix += spec.stride) {
              scratch[ox] += wt * static_cast<double>(iline[ix]);
            }
          }
        }
        float* oline = ov + (static_cast<std::size_t>(b) * cout + oc) * lo;
        for (int i = 0; i < lo; ++i) oline[i] = static_cast<float>(scratch[i]);
      }
    }
  }

  if (input.requires_grad() || weight.requires_grad() || (bias && bias->requires_grad())) {
    out.set_requires_grad(true);
  }
  Tensor bias_t = bias ? *bias : Tensor();
  std::vector<Tensor> node_inputs = {input, weight};
  if (bias) node_inputs.push_back(*bias);
  tape.record(
      {"conv1d", std::move(node_inputs), out,
       [input, weight, bias_t, out, spec, n, cin, len, cout, k, cin_g, cout_g, lo]() {
         const float* iv = input.values().data();
         const float* wv = weight.values().data();
         const float* go = out.raw()->grad.data();
         const bool need_in = input.requires_grad();
         const bool need_w = weight.requires_grad();
         const bool need_b = bias_t.defined() && bias_t.requires_grad();
         std::vector<double> gin(need_in ? input.numel() : 0, 0.0);
         std::vector<double> gw(need_w ? weight.numel() : 0, 0.0);
         std::vector<double> gb(need_b ? static_cast<std::size_t>(cout) : 0, 0.0);
         for (int b = 0; b < n; ++b) {
           for (int oc = 0; oc < cout; ++oc) {
             const int g = oc / cout_g;
             const float* goline = go + (static_cast<std::size_t>(b) * cout + oc) * lo;
             if (need_b) {
               double s = 0.0;
               for (int i = 0; i < lo; ++i) s += goline[i];
               gb[oc] += s;
             }
             for (int ic = 0; ic < cin_g; ++ic) {
               const std::size_t ibase =
                   (static_cast<std::size_t>(b) * cin + g * cin_g + ic) * len;
               const std::size_t wbase = (static_cast<std::size_t>(oc) * cin_g + ic) * k;
               for (int kx = 0; kx < k; ++kx) {
                 const int xoff = kx * spec.dilation - spec.padding;
                 const TapRange rx = tap_range(len, lo, spec.stride, xoff);
                 const double wt = wv[wbase + kx];
                 double gw_acc = 0.0;
                 int ix = rx.lo * spec.stride + xoff;
                 for (int ox = rx.lo; ox <= rx.hi; ++ox, ix += spec.stride) {
                   const double g_out = goline[ox];
                   if (need_in) gin[ibase + ix] += g_out * wt;
                   if (need_w) gw_acc += g_out * static_cast<double>(iv[ibase + ix]);
                 }
                 if (need_w) gw[wbase + kx] += gw_acc;
               }
             }
           }
         }
         if (need_in) {
           float* g = input.raw()->grad.data();
           for (std::size_t i = 0; i < gin.size(); ++i) g[i] += static_cast<float>(gin[i]);
         }
         if (need_w) {
           float* g = weight.raw()->grad.data();
           for (std::size_t i = 0; i < gw.size(); ++i) g[i] += static_cast<float>(gw[i]);
         }
         if (need_b) {
           float* g = bias_t.raw()->grad.data();
           for (std::size_t i = 0; i < gb.size(); ++i) g[i] += static_cast<float>(gb[i]);
         }
       },
       [input, weight, bias_t, out, spec, n, cin, len, cout, k](ReplayValues& vals) {
         const std::vector<double>* bd = nullptr;
         if (bias_t.defined()) bd = &vals.at(bias_t);
         reference::conv1d(vals.at(input), n, cin, len, vals.at(weight), cout, k,
                           bd ? bd->data() : nullptr, spec, vals.slot(out));
       }});
  return out;
}

Tensor fully_connected(Tape& tape, const Tensor& input, const Tensor& weight,
                       const Tensor& bias) {
  require<ShapeError>(input.rank() == 2, "fully_connected input must be [N,Fin], got ",
                      input.shape_str());
  require<ShapeError>(weight.rank() == 2, "fully_connected weight must be [Fout,Fin], got ",
                      weight.shape_str());
  const int n = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
  require<ShapeError>(weight.dim(1) == fin, "fully_connected inner dims disagree: input ",
                      input.shape_str(), " vs weight ", weight.shape_str());
  require<ShapeError>(bias.rank() == 1 && bias.dim(0) == fout, "fully_connected bias must be [",
                      fout, "], got ", bias.shape_str());

  Tensor out({n, fout});
  {
    const float* iv = input.values().data();
    const float* wv = weight.values().data();
    const float* bv = bias.values().data();
    float* ov = out.values().data();
    for (int b = 0; b < n; ++b) {
      for (int o = 0; o < fout; ++o) {
        double acc = bv[o];
        const float* irow = iv + static_cast<std::size_t>(b) * fin;
        const float* wrow = wv + static_cast<std::size_t>(o) * fin;
        for (int i = 0; i < fin; ++i) acc += static_cast<double>(irow[i]) * wrow[i];
        ov[static_cast<std::size_t>(b) * fout + o] = static_cast<float>(acc);
      }
    }
  }

  if (input.requires_grad() || weight.requires_grad() || bias.requires_grad()) {
    out.set_requires_grad(true);
  }
  tape.record({"fully_connected",
               {input, weight, bias},
               out,
               [input, weight, bias, out, n, fin, fout]() {
                 const float* iv = input.values().data();
                 const float* wv = weight.values().data();
                 const float* go = out.raw()->grad.data();
                 if (input.requires_grad()) {
                   float* gi = input.raw()->grad.data();
                   for (int b = 0; b < n; ++b) {
                     for (int i = 0; i < fin; ++i) {
                       double acc = 0.0;
                       for (int o = 0; o < fout; ++o) {
                         acc += static_cast<double>(go[static_cast<std::size_t>(b) * fout + o]) *
                                wv[static_cast<std::size_t>(o) * fin + i];
                       }
                       gi[static_cast<std::size_t>(b) * fin + i] += static_cast<float>(acc);
                     }
                   }
                 }
                 if (weight.requires_grad()) {
                   float* gw = weight.raw()->grad.data();
                   for (int o = 0; o < fout; ++o) {
                     for (int i = 0; i < fin; ++i) {
                       double acc = 0.0;
                       for (int b = 0; b < n; ++b) {
                         acc += static_cast<double>(go[static_cast<std::size_t>(b) * fout + o]) *
                                iv[static_cast<std::size_t>(b) * fin + i];
                       }
                       gw[static_cast<std::size_t>(o) * fin + i] += static_cast<float>(acc);
                     }
                   }
                 }
                 if (bias.requires_grad()) {
                   float* gb = bias.raw()->grad.data();
                   for (int o = 0; o < fout; ++o) {
                     double acc = 0.0;
                     for (int b = 0; b < n; ++b) {
                       acc += go[static_cast<std::size_t>(b) * fout + o];
                     }
                     gb[o] += static_cast<float>(acc);
                   }
                 }
               },
               [input, weight, bias, out, n, fin, fout](ReplayValues& vals) {
                 reference::fully_connected(vals.at(input), n, fin, vals.at(weight), fout,
                                            vals.at(bias), vals.slot(out));
               }});
  return out;
}

}  // namespace smanet::ops
