#include "dcrnet/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dcrnet/errors.hpp"
#include "dcrnet/threading.hpp"

namespace dcrnet {

namespace {

// Reductions use sixteen fixed lanes folded in a fixed order so the loops
// vectorize under strict FP semantics and stay bit-reproducible for any
// worker count.
constexpr int kLanes = 16;

template <typename T>
struct Lanes {
  T v[kLanes] = {};

  T fold() const {
    T s[kLanes / 2];
    for (int l = 0; l < kLanes / 2; ++l) s[l] = v[l] + v[l + kLanes / 2];
    T q0 = (s[0] + s[1]) + (s[2] + s[3]);
    T q1 = (s[4] + s[5]) + (s[6] + s[7]);
    return q0 + q1;
  }

  void mul_add(const T* __restrict a, const T* __restrict b, int64_t n) {
    int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
      for (int l = 0; l < kLanes; ++l) v[l] += a[i + l] * b[i + l];
    }
    for (; i < n; ++i) v[0] += a[i] * b[i];
  }
};

template <typename T>
inline T dot_lanes(const T* __restrict a, const T* __restrict b, int64_t n) {
  Lanes<T> lanes;
  lanes.mul_add(a, b, n);
  return lanes.fold();
}

template <typename Acc, typename T>
inline Acc sum_lanes(const T* __restrict a, int64_t n) {
  Lanes<Acc> lanes;
  int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) lanes.v[l] += static_cast<Acc>(a[i + l]);
  }
  for (; i < n; ++i) lanes.v[0] += static_cast<Acc>(a[i]);
  return lanes.fold();
}

template <typename Acc, typename T>
inline Acc sumsq_dev_lanes(const T* __restrict a, int64_t n, Acc mean) {
  Lanes<Acc> lanes;
  int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      Acc d = static_cast<Acc>(a[i + l]) - mean;
      lanes.v[l] += d * d;
    }
  }
  for (; i < n; ++i) {
    Acc d = static_cast<Acc>(a[i]) - mean;
    lanes.v[0] += d * d;
  }
  return lanes.fold();
}

template <typename T>
inline void axpy(T* __restrict dst, const T* __restrict src, T a, int64_t n) {
  if (n == 32) {  // the row width of every training-scale feature map
    for (int i = 0; i < 32; ++i) dst[i] += a * src[i];
    return;
  }
  for (int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

template <typename T>
inline void scale_into(T* __restrict dst, const T* __restrict src, T a, int64_t n) {
  if (n == 32) {
    for (int i = 0; i < 32; ++i) dst[i] = a * src[i];
    return;
  }
  for (int64_t i = 0; i < n; ++i) dst[i] = a * src[i];
}

constexpr int kMaxTapChunk = 9;  // a full 3x3 kernel in one pass

/// Reductions over (n, i, j) of g[n][i][j] * p[n][i][j + tap offset] for a
/// chunk of kernel taps at once; each gradient row is read once and fed to
/// every tap's lane accumulator. Per-tap summation order is fixed and
/// independent of the other taps.
template <typename T>
void conv_weight_grad_taps(T* __restrict out, const T* __restrict g, const T* __restrict p,
                           const int64_t* __restrict offsets, int64_t ntaps, int64_t n,
                           int64_t g_stride, int64_t p_stride, int64_t ho, int64_t wo,
                           int64_t wp) {
  T lanes[kMaxTapChunk][kLanes] = {};
  for (int64_t s = 0; s < n; ++s) {
    const T* __restrict gp = g + s * g_stride;
    const T* __restrict pp = p + s * p_stride;
    for (int64_t i = 0; i < ho; ++i) {
      const T* a = gp + i * wo;
      const T* b = pp + i * wp;
      for (int64_t t = 0; t < ntaps; ++t) {
        const T* bt = b + offsets[t];
        T* lane = lanes[t];
        int64_t j = 0;
        for (; j + kLanes <= wo; j += kLanes) {
          for (int l = 0; l < kLanes; ++l) lane[l] += a[j + l] * bt[j + l];
        }
        for (; j < wo; ++j) lane[0] += a[j] * bt[j];
      }
    }
  }
  for (int64_t t = 0; t < ntaps; ++t) {
    T s[kLanes / 2];
    for (int l = 0; l < kLanes / 2; ++l) s[l] = lanes[t][l] + lanes[t][l + kLanes / 2];
    out[t] = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
  }
}

// Zero-padded per-sample scratch so the convolution inner loops run over
// full-width rows with no bounds handling.
template <typename T>
void fill_padded(T* __restrict pad, const T* __restrict src, int64_t channels, int64_t h,
                 int64_t w, int64_t hp, int64_t wp, int64_t ph, int64_t pw) {
  std::fill(pad, pad + channels * hp * wp, T(0));
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t i = 0; i < h; ++i) {
      const T* s = src + (c * h + i) * w;
      T* d = pad + (c * hp + i + ph) * wp + pw;
      std::copy(s, s + w, d);
    }
  }
}

struct ConvDims {
  int64_t n, cin, h, w;
  int64_t cout, ho, wo;
  int64_t cpg, opg;  // channels per group in/out
};

ConvDims check_conv(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws,
                    const ConvSpec& spec) {
  spec.validate();
  if (xs.size() != 4) {
    throw DimensionError("conv2d input must be rank 4 [N,C,H,W], got rank " +
                         std::to_string(xs.size()));
  }
  if (xs[1] != spec.in_channels) {
    throw DimensionError("conv2d input has " + std::to_string(xs[1]) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
  }
  int64_t cpg = spec.in_channels / spec.groups;
  std::vector<int64_t> expect = {spec.out_channels, cpg, spec.kh, spec.kw};
  if (ws != expect) {
    throw DimensionError("conv2d weight shape (" + Tensor<float>::shape_string(ws) +
                         ") does not match spec (" + Tensor<float>::shape_string(expect) + ")");
  }
  ConvDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = spec.out_channels;
  d.ho = spec.out_h(d.h);
  d.wo = spec.out_w(d.w);
  if (d.ho < 1 || d.wo < 1) {
    throw DimensionError("conv2d output would be empty: input " + std::to_string(d.h) + "x" +
                         std::to_string(d.w) + ", effective kernel " +
                         std::to_string(spec.effective_kh()) + "x" +
                         std::to_string(spec.effective_kw()));
  }
  d.cpg = cpg;
  d.opg = spec.out_channels / spec.groups;
  return d;
}

}  // namespace

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) {
    throw ConfigError("conv channels must be positive");
  }
  if (kh < 1 || kw < 1 || dh < 1 || dw < 1) {
    throw ConfigError("conv kernel and dilation must be >= 1");
  }
  if (ph < 0 || pw < 0) {
    throw ConfigError("conv padding must be >= 0");
  }
  if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv groups (" + std::to_string(groups) +
                      ") must divide in_channels (" + std::to_string(in_channels) +
                      ") and out_channels (" + std::to_string(out_channels) + ")");
  }
}

ConvSpec ConvSpec::same_padded(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw, int64_t dh,
                               int64_t dw, int64_t groups) {
  ConvSpec s;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kh = kh;
  s.kw = kw;
  s.dh = dh;
  s.dw = dw;
  s.groups = groups;
  s.ph = dh * (kh - 1) / 2;
  s.pw = dw * (kw - 1) / 2;
  s.validate();
  return s;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec) {
  ConvDims d = check_conv(input.shape(), weight.shape(), spec);
  Tensor<T> out = Tensor<T>::uninitialized({d.n, d.cout, d.ho, d.wo});
  const T* x = input.data();
  const T* wgt = weight.data();
  T* y = out.data();
  int64_t hp = d.h + 2 * spec.ph, wp = d.w + 2 * spec.pw;
  int64_t taps = spec.kh * spec.kw;

  parallel_for(0, d.n, [&](int64_t n) {
    detail::RawBuffer<T> pad(static_cast<size_t>(d.cin * hp * wp), /*zero=*/false);
    fill_padded(pad.data(), x + n * d.cin * d.h * d.w, d.cin, d.h, d.w, hp, wp, spec.ph,
                spec.pw);
    for (int64_t g = 0; g < spec.groups; ++g) {
      for (int64_t oc = 0; oc < d.opg; ++oc) {
        int64_t co = g * d.opg + oc;
        T* out_plane = y + (n * d.cout + co) * d.ho * d.wo;
        const T* w_base = wgt + co * d.cpg * taps;
        if (d.wo == 32) {
          // Register-tiled path: the output row accumulates across all taps
          // before a single store.
          for (int64_t i = 0; i < d.ho; ++i) {
            T acc[32] = {};
            for (int64_t ic = 0; ic < d.cpg; ++ic) {
              const T* p_plane = pad.data() + (g * d.cpg + ic) * hp * wp;
              for (int64_t u = 0; u < spec.kh; ++u) {
                const T* p_row = p_plane + (i + u * spec.dh) * wp;
                for (int64_t v = 0; v < spec.kw; ++v) {
                  T wv = w_base[ic * taps + u * spec.kw + v];
                  const T* __restrict src = p_row + v * spec.dw;
                  for (int j = 0; j < 32; ++j) acc[j] += wv * src[j];
                }
              }
            }
            T* __restrict dst = out_plane + i * 32;
            for (int j = 0; j < 32; ++j) dst[j] = acc[j];
          }
          continue;
        }
        for (int64_t i = 0; i < d.ho; ++i) {
          T* __restrict dst = out_plane + i * d.wo;
          bool first = true;
          for (int64_t ic = 0; ic < d.cpg; ++ic) {
            const T* p_plane = pad.data() + (g * d.cpg + ic) * hp * wp;
            for (int64_t u = 0; u < spec.kh; ++u) {
              const T* p_row = p_plane + (i + u * spec.dh) * wp;
              for (int64_t v = 0; v < spec.kw; ++v) {
                T wv = w_base[ic * taps + u * spec.kw + v];
                const T* src = p_row + v * spec.dw;
                if (first) {
                  scale_into(dst, src, wv, d.wo);
                  first = false;
                } else {
                  axpy(dst, src, wv, d.wo);
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

template <typename T>
void conv2d_backward_input(Tensor<T>& dinput, const Tensor<T>& weight, const Tensor<T>& dout,
                           const ConvSpec& spec) {
  ConvDims d = check_conv(dinput.shape(), weight.shape(), spec);
  const T* g = dout.data();
  const T* wgt = weight.data();
  T* dx = dinput.data();
  int64_t taps = spec.kh * spec.kw;
  int64_t keh = spec.effective_kh(), kew = spec.effective_kw();

  // Gather form: the input gradient is the output gradient convolved with
  // the flipped kernel, evaluated over a re-padded gradient map.
  int64_t top = keh - 1 - spec.ph, left = kew - 1 - spec.pw;
  if (top >= 0 && left >= 0) {
    int64_t hp = d.h + keh - 1, wp = d.w + kew - 1;
    parallel_for(0, d.n, [&](int64_t n) {
      detail::RawBuffer<T> pad(static_cast<size_t>(d.cout * hp * wp), /*zero=*/false);
      fill_padded(pad.data(), g + n * d.cout * d.ho * d.wo, d.cout, d.ho, d.wo, hp, wp, top,
                  left);
      for (int64_t grp = 0; grp < spec.groups; ++grp) {
        for (int64_t ic = 0; ic < d.cpg; ++ic) {
          int64_t ci = grp * d.cpg + ic;
          T* dx_plane = dx + (n * d.cin + ci) * d.h * d.w;
          for (int64_t i = 0; i < d.h; ++i) {
            if (d.w == 32) {
              T acc[32] = {};
              for (int64_t oc = 0; oc < d.opg; ++oc) {
                int64_t co = grp * d.opg + oc;
                const T* p_plane = pad.data() + co * hp * wp;
                const T* w_base = wgt + (co * d.cpg + ic) * taps;
                for (int64_t u = 0; u < spec.kh; ++u) {
                  const T* p_row = p_plane + (i + (keh - 1) - u * spec.dh) * wp + (kew - 1);
                  for (int64_t v = 0; v < spec.kw; ++v) {
                    T wv = w_base[u * spec.kw + v];
                    const T* __restrict src = p_row - v * spec.dw;
                    for (int j = 0; j < 32; ++j) acc[j] += wv * src[j];
                  }
                }
              }
              T* __restrict dst = dx_plane + i * 32;
              for (int j = 0; j < 32; ++j) dst[j] += acc[j];
            } else {
              T* dst = dx_plane + i * d.w;
              for (int64_t oc = 0; oc < d.opg; ++oc) {
                int64_t co = grp * d.opg + oc;
                const T* p_plane = pad.data() + co * hp * wp;
                const T* w_base = wgt + (co * d.cpg + ic) * taps;
                for (int64_t u = 0; u < spec.kh; ++u) {
                  const T* p_row = p_plane + (i + (keh - 1) - u * spec.dh) * wp + (kew - 1);
                  for (int64_t v = 0; v < spec.kw; ++v) {
                    axpy(dst, p_row - v * spec.dw, w_base[u * spec.kw + v], d.w);
                  }
                }
              }
            }
          }
        }
      }
    });
    return;
  }

  // Over-padded configurations fall back to scattering into padded scratch
  // and folding the interior back.
  int64_t hp = d.h + 2 * spec.ph, wp = d.w + 2 * spec.pw;
  parallel_for(0, d.n, [&](int64_t n) {
    std::vector<T> pad(static_cast<size_t>(d.cin * hp * wp), T(0));
    for (int64_t grp = 0; grp < spec.groups; ++grp) {
      for (int64_t oc = 0; oc < d.opg; ++oc) {
        int64_t co = grp * d.opg + oc;
        const T* g_plane = g + (n * d.cout + co) * d.ho * d.wo;
        const T* w_base = wgt + co * d.cpg * taps;
        for (int64_t i = 0; i < d.ho; ++i) {
          const T* __restrict g_row = g_plane + i * d.wo;
          for (int64_t ic = 0; ic < d.cpg; ++ic) {
            T* p_plane = pad.data() + (grp * d.cpg + ic) * hp * wp;
            for (int64_t u = 0; u < spec.kh; ++u) {
              T* p_row = p_plane + (i + u * spec.dh) * wp;
              for (int64_t v = 0; v < spec.kw; ++v) {
                axpy(p_row + v * spec.dw, g_row, w_base[ic * taps + u * spec.kw + v], d.wo);
              }
            }
          }
        }
      }
    }
    for (int64_t ci = 0; ci < d.cin; ++ci) {
      for (int64_t i = 0; i < d.h; ++i) {
        const T* __restrict src = pad.data() + (ci * hp + i + spec.ph) * wp + spec.pw;
        T* __restrict row = dx + ((n * d.cin + ci) * d.h + i) * d.w;
        for (int64_t j = 0; j < d.w; ++j) row[j] += src[j];
      }
    }
  });
}

template <typename T>
void conv2d_backward_weight(Tensor<T>& dweight, const Tensor<T>& input, const Tensor<T>& dout,
                            const ConvSpec& spec) {
  ConvDims d = check_conv(input.shape(), dweight.shape(), spec);
  const T* x = input.data();
  const T* g = dout.data();
  T* dw = dweight.data();
  int64_t hp = d.h + 2 * spec.ph, wp = d.w + 2 * spec.pw;
  int64_t taps = spec.kh * spec.kw;

  detail::RawBuffer<T> pad(static_cast<size_t>(d.n * d.cin * hp * wp), /*zero=*/false);
  parallel_for(0, d.n, [&](int64_t n) {
    fill_padded(pad.data() + n * d.cin * hp * wp, x + n * d.cin * d.h * d.w, d.cin, d.h, d.w, hp,
                wp, spec.ph, spec.pw);
  });

  std::vector<int64_t> tap_offsets(static_cast<size_t>(taps));
  for (int64_t u = 0; u < spec.kh; ++u) {
    for (int64_t v = 0; v < spec.kw; ++v) {
      tap_offsets[static_cast<size_t>(u * spec.kw + v)] = u * spec.dh * wp + v * spec.dw;
    }
  }

  // Each weight element is reduced over (n, i, j) in a fixed order; worker
  // partitioning over output channels cannot change the result.
  parallel_for(0, d.cout, [&](int64_t co) {
    int64_t grp = co / d.opg;
    T tap_grads[kMaxTapChunk];
    for (int64_t ic = 0; ic < d.cpg; ++ic) {
      int64_t ci = grp * d.cpg + ic;
      for (int64_t tb = 0; tb < taps; tb += kMaxTapChunk) {
        int64_t chunk = std::min<int64_t>(kMaxTapChunk, taps - tb);
        conv_weight_grad_taps(tap_grads, g + co * d.ho * d.wo, pad.data() + ci * hp * wp,
                              tap_offsets.data() + tb, chunk, d.n, d.cout * d.ho * d.wo,
                              d.cin * hp * wp, d.ho, d.wo, wp);
        for (int64_t t = 0; t < chunk; ++t) {
          dw[(co * d.cpg + ic) * taps + tb + t] += tap_grads[t];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw DimensionError("linear expects input [N,F], weight [G,F], bias [G]");
  }
  int64_t n = input.dim(0), f = input.dim(1);
  int64_t gdim = weight.dim(0);
  if (weight.dim(1) != f || bias.dim(0) != gdim) {
    throw DimensionError("linear shapes inconsistent: input [" + std::to_string(n) + "," +
                         std::to_string(f) + "], weight [" + std::to_string(weight.dim(0)) + "," +
                         std::to_string(weight.dim(1)) + "], bias [" + std::to_string(bias.dim(0)) +
                         "]");
  }
  Tensor<T> out = Tensor<T>::uninitialized({n, gdim});
  const T* x = input.data();
  const T* w = weight.data();
  const T* b = bias.data();
  T* y = out.data();
  // Output rows are produced in blocks so the active weight slice stays in
  // cache while the batch streams past it; four rows share each input load.
  constexpr int64_t kGBlock = 64;
  for (int64_t gb = 0; gb < gdim; gb += kGBlock) {
    int64_t ge = std::min(gdim, gb + kGBlock);
    parallel_for(0, n, [&](int64_t i) {
      const T* __restrict x_row = x + i * f;
      T* y_row = y + i * gdim;
      int64_t g = gb;
      for (; g + 4 <= ge; g += 4) {
        const T* __restrict w0 = w + g * f;
        const T* __restrict w1 = w + (g + 1) * f;
        const T* __restrict w2 = w + (g + 2) * f;
        const T* __restrict w3 = w + (g + 3) * f;
        Lanes<T> l0, l1, l2, l3;
        int64_t k = 0;
        for (; k + kLanes <= f; k += kLanes) {
          for (int l = 0; l < kLanes; ++l) {
            T xv = x_row[k + l];
            l0.v[l] += xv * w0[k + l];
            l1.v[l] += xv * w1[k + l];
            l2.v[l] += xv * w2[k + l];
            l3.v[l] += xv * w3[k + l];
          }
        }
        for (; k < f; ++k) {
          T xv = x_row[k];
          l0.v[0] += xv * w0[k];
          l1.v[0] += xv * w1[k];
          l2.v[0] += xv * w2[k];
          l3.v[0] += xv * w3[k];
        }
        y_row[g] = l0.fold() + b[g];
        y_row[g + 1] = l1.fold() + b[g + 1];
        y_row[g + 2] = l2.fold() + b[g + 2];
        y_row[g + 3] = l3.fold() + b[g + 3];
      }
      for (; g < ge; ++g) {
        y_row[g] = dot_lanes(x_row, w + g * f, f) + b[g];
      }
    });
  }
  return out;
}

template <typename T>
void linear_backward(Tensor<T>& dinput, Tensor<T>& dweight, Tensor<T>& dbias,
                     const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& dout) {
  int64_t n = input.dim(0), f = input.dim(1), gdim = weight.dim(0);
  const T* x = input.data();
  const T* w = weight.data();
  const T* g = dout.data();

  T* dx = dinput.data();
  constexpr int64_t kKBlock = 64;
  for (int64_t kb = 0; kb < gdim; kb += kKBlock) {
    int64_t ke = std::min(gdim, kb + kKBlock);
    parallel_for(0, n, [&](int64_t i) {
      const T* g_row = g + i * gdim;
      T* __restrict dx_row = dx + i * f;
      int64_t k = kb;
      for (; k + 4 <= ke; k += 4) {
        const T* __restrict w0 = w + k * f;
        const T* __restrict w1 = w + (k + 1) * f;
        const T* __restrict w2 = w + (k + 2) * f;
        const T* __restrict w3 = w + (k + 3) * f;
        T c0 = g_row[k], c1 = g_row[k + 1], c2 = g_row[k + 2], c3 = g_row[k + 3];
        for (int64_t j = 0; j < f; ++j) {
          dx_row[j] += (c0 * w0[j] + c1 * w1[j]) + (c2 * w2[j] + c3 * w3[j]);
        }
      }
      for (; k < ke; ++k) {
        axpy(dx_row, w + k * f, g_row[k], f);
      }
    });
  }

  // dW[g,:] += sum_n dout[n,g] * x[n,:], accumulated in n order. Blocks of n
  // keep the active dW rows hot while x is streamed.
  T* dw = dweight.data();
  constexpr int64_t kBlock = 16;
  for (int64_t nb = 0; nb < n; nb += kBlock) {
    int64_t ne = std::min(n, nb + kBlock);
    parallel_for(0, gdim, [&](int64_t k) {
      T* __restrict dw_row = dw + k * f;
      int64_t i = nb;
      for (; i + 4 <= ne; i += 4) {
        const T* __restrict x0 = x + i * f;
        const T* __restrict x1 = x + (i + 1) * f;
        const T* __restrict x2 = x + (i + 2) * f;
        const T* __restrict x3 = x + (i + 3) * f;
        T c0 = g[i * gdim + k], c1 = g[(i + 1) * gdim + k];
        T c2 = g[(i + 2) * gdim + k], c3 = g[(i + 3) * gdim + k];
        for (int64_t j = 0; j < f; ++j) {
          dw_row[j] += (c0 * x0[j] + c1 * x1[j]) + (c2 * x2[j] + c3 * x3[j]);
        }
      }
      for (; i < ne; ++i) {
        axpy(dw_row, x + i * f, g[i * gdim + k], f);
      }
    });
  }

  T* db = dbias.data();
  for (int64_t k = 0; k < gdim; ++k) {
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += g[i * gdim + k];
    db[k] += acc;
  }
}

template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                              const Tensor<T>& beta, Tensor<T>& running_mean,
                              Tensor<T>& running_var, T momentum, T eps, bool training,
                              BnSaved<T>& saved) {
  if (input.rank() != 4) throw DimensionError("batchnorm2d input must be rank 4 [N,C,H,W]");
  int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw DimensionError("batchnorm2d state size does not match " + std::to_string(c) +
                         " channels");
  }
  int64_t m = n * hw;
  if (training && m < 2) {
    throw UsageError("batchnorm2d training mode needs at least 2 values per channel");
  }

  saved.mean.assign(static_cast<size_t>(c), T(0));
  saved.invstd.assign(static_cast<size_t>(c), T(0));
  saved.training = training;
  const T* x = input.data();

  if (training) {
    parallel_for(0, c, [&](int64_t ch) {
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        sum += static_cast<double>(sum_lanes<T>(x + (i * c + ch) * hw, hw));
      }
      double mean = sum / static_cast<double>(m);
      double ssq = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        ssq += static_cast<double>(
            sumsq_dev_lanes<T>(x + (i * c + ch) * hw, hw, static_cast<T>(mean)));
      }
      double var_b = ssq / static_cast<double>(m);  // biased, used to normalize
      saved.mean[ch] = static_cast<T>(mean);
      saved.invstd[ch] = static_cast<T>(1.0 / std::sqrt(var_b + static_cast<double>(eps)));
      double var_u = m > 1 ? ssq / static_cast<double>(m - 1) : var_b;
      running_mean[ch] =
          (T(1) - momentum) * running_mean[ch] + momentum * static_cast<T>(mean);
      running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * static_cast<T>(var_u);
    });
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      saved.mean[ch] = running_mean[ch];
      saved.invstd[ch] = T(1) / std::sqrt(running_var[ch] + eps);
    }
  }

  Tensor<T> out = Tensor<T>::uninitialized(input.shape());
  T* y = out.data();
  std::vector<T> scale(static_cast<size_t>(c)), shift(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    scale[ch] = gamma[ch] * saved.invstd[ch];
    shift[ch] = beta[ch] - scale[ch] * saved.mean[ch];
  }
  parallel_for(0, n, [&](int64_t i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* __restrict src = x + (i * c + ch) * hw;
      T* __restrict dst = y + (i * c + ch) * hw;
      T a = scale[ch], b = shift[ch];
      for (int64_t k = 0; k < hw; ++k) dst[k] = a * src[k] + b;
    }
  });
  return out;
}

template <typename T>
void batchnorm2d_backward(Tensor<T>& dinput, Tensor<T>& dgamma, Tensor<T>& dbeta,
                          const Tensor<T>& input, const Tensor<T>& gamma,
                          const BnSaved<T>& saved, const Tensor<T>& dout) {
  int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  int64_t m = n * hw;
  const T* x = input.data();
  const T* g = dout.data();
  T* dx = dinput.data();

  parallel_for(0, c, [&](int64_t ch) {
    double mean = static_cast<double>(saved.mean[ch]);
    double invstd = static_cast<double>(saved.invstd[ch]);
    double s1 = 0.0, s2 = 0.0;  // sum(dy), sum(dy * xhat)
    for (int64_t i = 0; i < n; ++i) {
      const T* __restrict g_row = g + (i * c + ch) * hw;
      const T* __restrict x_row = x + (i * c + ch) * hw;
      s1 += static_cast<double>(sum_lanes<T>(g_row, hw));
      T mean_t = static_cast<T>(mean), invstd_t = static_cast<T>(invstd);
      Lanes<T> lanes;
      int64_t k = 0;
      for (; k + kLanes <= hw; k += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
          lanes.v[l] += g_row[k + l] * ((x_row[k + l] - mean_t) * invstd_t);
        }
      }
      for (; k < hw; ++k) {
        lanes.v[0] += g_row[k] * ((x_row[k] - mean_t) * invstd_t);
      }
      s2 += static_cast<double>(lanes.fold());
    }
    dgamma[ch] += static_cast<T>(s2);
    dbeta[ch] += static_cast<T>(s1);

    T gs = static_cast<T>(static_cast<double>(gamma[ch]) * invstd);
    if (saved.training) {
      T mean_t = static_cast<T>(mean);
      T invstd_t = static_cast<T>(invstd);
      T c1 = static_cast<T>(s1 / static_cast<double>(m));
      T c2 = static_cast<T>(s2 / static_cast<double>(m));
      for (int64_t i = 0; i < n; ++i) {
        const T* __restrict g_row = g + (i * c + ch) * hw;
        const T* __restrict x_row = x + (i * c + ch) * hw;
        T* __restrict dx_row = dx + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) {
          T xhat = (x_row[k] - mean_t) * invstd_t;
          dx_row[k] += gs * (g_row[k] - c1 - xhat * c2);
        }
      }
    } else {
      for (int64_t i = 0; i < n; ++i) {
        const T* __restrict g_row = g + (i * c + ch) * hw;
        T* __restrict dx_row = dx + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) {
          dx_row[k] += gs * g_row[k];
        }
      }
    }
  });
}

namespace {

// Loop bodies live in standalone functions so the no-alias qualifiers are
// visible through the parallel_for closures. The select is written in
// min/max arithmetic, which vectorizes where a branch would not.
template <typename T>
void prelu_span(T* __restrict y, const T* __restrict x, T alpha, int64_t lo, int64_t hi) {
  for (int64_t i = lo; i < hi; ++i) {
    T v = x[i];
    y[i] = std::max(v, T(0)) + alpha * std::min(v, T(0));
  }
}

/// Input gradient plus this block's slope-gradient partial. Two plain loops;
/// the second pass reads data the first just pulled into cache.
template <typename T>
T prelu_grad_span(T* __restrict dx, const T* __restrict x, const T* __restrict g, T alpha,
                  int64_t lo, int64_t hi) {
  for (int64_t i = lo; i < hi; ++i) {
    T slope = x[i] >= T(0) ? T(1) : alpha;
    dx[i] += slope * g[i];
  }
  Lanes<T> lanes;
  int64_t i = lo;
  for (; i + kLanes <= hi; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      lanes.v[l] += std::min(x[i + l], T(0)) * g[i + l];
    }
  }
  for (; i < hi; ++i) {
    lanes.v[0] += std::min(x[i], T(0)) * g[i];
  }
  return lanes.fold();
}

}  // namespace

template <typename T>
Tensor<T> prelu_forward(const Tensor<T>& input, T alpha) {
  Tensor<T> out = Tensor<T>::uninitialized(input.shape());
  const T* x = input.data();
  T* y = out.data();
  int64_t n = input.numel();
  constexpr int64_t kBlock = 1 << 14;
  parallel_for(0, (n + kBlock - 1) / kBlock, [&](int64_t b) {
    int64_t lo = b * kBlock, hi = std::min(n, lo + kBlock);
    prelu_span(y, x, alpha, lo, hi);
  });
  return out;
}

template <typename T>
void prelu_backward(Tensor<T>& dinput, Tensor<T>& dalpha, const Tensor<T>& input, T alpha,
                    const Tensor<T>& dout) {
  const T* x = input.data();
  const T* g = dout.data();
  T* dx = dinput.data();
  int64_t n = input.numel();
  // d/dalpha = sum over negative positions of x * dy. Blocks are a fixed
  // size and their partials are folded in block order, so the result does
  // not depend on the worker count.
  constexpr int64_t kBlock = 1 << 14;
  int64_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<T> partial(static_cast<size_t>(blocks));
  parallel_for(0, blocks, [&](int64_t b) {
    int64_t lo = b * kBlock, hi = std::min(n, lo + kBlock);
    partial[static_cast<size_t>(b)] = prelu_grad_span(dx, x, g, alpha, lo, hi);
  });
  T acc = T(0);
  for (int64_t b = 0; b < blocks; ++b) acc += partial[static_cast<size_t>(b)];
  dalpha[0] += acc;
}

template <typename T>
Tensor<T> concat_channels_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4) {
    throw DimensionError("concat_channels expects rank-4 inputs");
  }
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels inputs disagree outside the channel axis: (" +
                         Tensor<T>::shape_string(a.shape()) + ") vs (" +
                         Tensor<T>::shape_string(b.shape()) + ")");
  }
  int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out = Tensor<T>::uninitialized({n, ca + cb, a.dim(2), a.dim(3)});
  T* y = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  for (int64_t i = 0; i < n; ++i) {
    std::copy(pa + i * ca * hw, pa + (i + 1) * ca * hw, y + i * (ca + cb) * hw);
    std::copy(pb + i * cb * hw, pb + (i + 1) * cb * hw, y + (i * (ca + cb) + ca) * hw);
  }
  return out;
}

template <typename T>
void concat_channels_backward(Tensor<T>& da, Tensor<T>& db, const Tensor<T>& dout) {
  int64_t n = da.dim(0), ca = da.dim(1), cb = db.dim(1), hw = da.dim(2) * da.dim(3);
  const T* g = dout.data();
  T* pa = da.data();
  T* pb = db.data();
  for (int64_t i = 0; i < n; ++i) {
    const T* ga = g + i * (ca + cb) * hw;
    const T* gb = ga + ca * hw;
    axpy(pa + i * ca * hw, ga, T(1), ca * hw);
    axpy(pb + i * cb * hw, gb, T(1), cb * hw);
  }
}

template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("add shapes differ: (" + Tensor<T>::shape_string(a.shape()) + ") vs (" +
                         Tensor<T>::shape_string(b.shape()) + ")");
  }
  Tensor<T> out = Tensor<T>::uninitialized(a.shape());
  const T* __restrict pa = a.data();
  const T* __restrict pb = b.data();
  T* __restrict y = out.data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = pa[i] + pb[i];
  return out;
}

template <typename T>
Tensor<T> mse_loss_forward(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!pred.same_shape(target)) {
    throw DimensionError("mse_loss shapes differ: (" + Tensor<T>::shape_string(pred.shape()) +
                         ") vs (" + Tensor<T>::shape_string(target.shape()) + ")");
  }
  const T* __restrict p = pred.data();
  const T* __restrict t = target.data();
  int64_t n = pred.numel();
  Lanes<double> lanes;
  int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) {
      double d = static_cast<double>(p[i + l]) - static_cast<double>(t[i + l]);
      lanes.v[l] += d * d;
    }
  }
  for (; i < n; ++i) {
    double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    lanes.v[0] += d * d;
  }
  return Tensor<T>::scalar(static_cast<T>(lanes.fold() / static_cast<double>(n)));
}

template <typename T>
void mse_loss_backward(Tensor<T>& dpred, Tensor<T>& dtarget, const Tensor<T>& pred,
                       const Tensor<T>& target, T upstream) {
  const T* __restrict p = pred.data();
  const T* __restrict t = target.data();
  T* __restrict dp = dpred.data();
  T* __restrict dt = dtarget.data();
  int64_t n = pred.numel();
  T scale = T(2) * upstream / static_cast<T>(n);
  for (int64_t i = 0; i < n; ++i) {
    T d = scale * (p[i] - t[i]);
    dp[i] += d;
    dt[i] -= d;
  }
}

template <typename T>
void mse_loss_backward_pred(Tensor<T>& dpred, const Tensor<T>& pred, const Tensor<T>& target,
                            T upstream) {
  const T* __restrict p = pred.data();
  const T* __restrict t = target.data();
  T* __restrict dp = dpred.data();
  int64_t n = pred.numel();
  T scale = T(2) * upstream / static_cast<T>(n);
  for (int64_t i = 0; i < n; ++i) {
    dp[i] += scale * (p[i] - t[i]);
  }
}

#define DCRNET_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const ConvSpec&);   \
  template void conv2d_backward_input<T>(Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                         const ConvSpec&);                                    \
  template void conv2d_backward_weight<T>(Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                          const ConvSpec&);                                   \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template void linear_backward<T>(Tensor<T>&, Tensor<T>&, Tensor<T>&, const Tensor<T>&,      \
                                   const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> batchnorm2d_forward<T>(const Tensor<T>&, const Tensor<T>&,               \
                                            const Tensor<T>&, Tensor<T>&, Tensor<T>&, T, T,   \
                                            bool, BnSaved<T>&);                               \
  template void batchnorm2d_backward<T>(Tensor<T>&, Tensor<T>&, Tensor<T>&, const Tensor<T>&, \
                                        const Tensor<T>&, const BnSaved<T>&,                  \
                                        const Tensor<T>&);                                    \
  template Tensor<T> prelu_forward<T>(const Tensor<T>&, T);                                   \
  template void prelu_backward<T>(Tensor<T>&, Tensor<T>&, const Tensor<T>&, T,                \
                                  const Tensor<T>&);                                          \
  template Tensor<T> concat_channels_forward<T>(const Tensor<T>&, const Tensor<T>&);          \
  template void concat_channels_backward<T>(Tensor<T>&, Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> add_forward<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mse_loss_forward<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template void mse_loss_backward<T>(Tensor<T>&, Tensor<T>&, const Tensor<T>&,                \
                                     const Tensor<T>&, T);                                    \
  template void mse_loss_backward_pred<T>(Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

DCRNET_INSTANTIATE_OPS(float)
DCRNET_INSTANTIATE_OPS(double)

#undef DCRNET_INSTANTIATE_OPS

}  // namespace dcrnet
