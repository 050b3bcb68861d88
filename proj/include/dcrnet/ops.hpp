#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dcrnet/tensor.hpp"

namespace dcrnet {

/// Full configuration of a 2-D convolution. Stride is fixed at 1 and there is
/// no bias term; normalization layers supply the shift.
struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kh = 1, kw = 1;
  int64_t dh = 1, dw = 1;
  int64_t groups = 1;
  int64_t ph = 0, pw = 0;

  /// Effective kernel size once dilation gaps are counted: k + (k-1)(d-1).
  int64_t effective_kh() const { return kh + (kh - 1) * (dh - 1); }
  int64_t effective_kw() const { return kw + (kw - 1) * (dw - 1); }

  int64_t out_h(int64_t h) const { return h + 2 * ph - effective_kh() + 1; }
  int64_t out_w(int64_t w) const { return w + 2 * pw - effective_kw() + 1; }

  void validate() const;

  /// Padding that keeps spatial size for odd kernels: p = d*(k-1)/2 per axis.
  static ConvSpec same_padded(int64_t in_ch, int64_t out_ch, int64_t kh, int64_t kw,
                              int64_t dh = 1, int64_t dw = 1, int64_t groups = 1);
};

// ---------------------------------------------------------------------------
// Raw kernels. Forward functions allocate outputs; backward functions
// accumulate (+=) into caller-owned buffers so gradients from several
// consumers sum naturally.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec);

template <typename T>
void conv2d_backward_input(Tensor<T>& dinput, const Tensor<T>& weight, const Tensor<T>& dout,
                           const ConvSpec& spec);

template <typename T>
void conv2d_backward_weight(Tensor<T>& dweight, const Tensor<T>& input, const Tensor<T>& dout,
                            const ConvSpec& spec);

/// out[n,g] = sum_f input[n,f] * weight[g,f] + bias[g]
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void linear_backward(Tensor<T>& dinput, Tensor<T>& dweight, Tensor<T>& dbias,
                     const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& dout);

/// Per-channel statistics captured by the forward pass for reuse in backward.
template <typename T>
struct BnSaved {
  std::vector<T> mean;
  std::vector<T> invstd;
  bool training = false;
};

template <typename T>
Tensor<T> batchnorm2d_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                              const Tensor<T>& beta, Tensor<T>& running_mean,
                              Tensor<T>& running_var, T momentum, T eps, bool training,
                              BnSaved<T>& saved);

template <typename T>
void batchnorm2d_backward(Tensor<T>& dinput, Tensor<T>& dgamma, Tensor<T>& dbeta,
                          const Tensor<T>& input, const Tensor<T>& gamma,
                          const BnSaved<T>& saved, const Tensor<T>& dout);

template <typename T>
Tensor<T> prelu_forward(const Tensor<T>& input, T alpha);

template <typename T>
void prelu_backward(Tensor<T>& dinput, Tensor<T>& dalpha, const Tensor<T>& input, T alpha,
                    const Tensor<T>& dout);

template <typename T>
Tensor<T> concat_channels_forward(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void concat_channels_backward(Tensor<T>& da, Tensor<T>& db, const Tensor<T>& dout);

template <typename T>
Tensor<T> add_forward(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mse_loss_forward(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
void mse_loss_backward(Tensor<T>& dpred, Tensor<T>& dtarget, const Tensor<T>& pred,
                       const Tensor<T>& target, T upstream);

/// Variant for a constant target whose gradient nobody consumes.
template <typename T>
void mse_loss_backward_pred(Tensor<T>& dpred, const Tensor<T>& pred, const Tensor<T>& target,
                            T upstream);

}  // namespace dcrnet
