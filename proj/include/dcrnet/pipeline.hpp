#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "dcrnet/tensor.hpp"

namespace dcrnet {

/// In-place unitary 1-D DFT, scaled by 1/sqrt(n) in both directions. Uses a
/// radix-2 FFT for power-of-two lengths and the direct transform otherwise.
template <typename T>
void dft_1d(std::complex<T>* data, int64_t n, bool inverse);

/// Frequency-spatial CSI matrix: nc subcarriers by nt antennas.
struct ChannelMatrix {
  int64_t nc = 0, nt = 0;
  std::vector<std::complex<float>> data;  // row-major [nc][nt]

  ChannelMatrix() = default;
  ChannelMatrix(int64_t nc_, int64_t nt_)
      : nc(nc_), nt(nt_), data(static_cast<size_t>(nc_ * nt_)) {}

  std::complex<float>& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * nt + c)]; }
  const std::complex<float>& at(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * nt + c)];
  }

  double frobenius_norm() const;
};

/// Truncated angular-delay matrix with a lossless 2 x na x nt real view
/// (channel 0 = real part, channel 1 = imaginary part).
struct AngularDelayMatrix {
  int64_t na = 0, nt = 0;
  std::vector<std::complex<float>> data;  // row-major [na][nt]

  AngularDelayMatrix() = default;
  AngularDelayMatrix(int64_t na_, int64_t nt_)
      : na(na_), nt(nt_), data(static_cast<size_t>(na_ * nt_)) {}

  std::complex<float>& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * nt + c)]; }
  const std::complex<float>& at(int64_t r, int64_t c) const {
    return data[static_cast<size_t>(r * nt + c)];
  }

  Tensor<float> real_view() const;
  static AngularDelayMatrix from_real_view(const Tensor<float>& t);
};

/// Unitary 2-D DFT into the angular-delay domain and its exact inverse.
ChannelMatrix dft_transform(const ChannelMatrix& h);
ChannelMatrix inverse_dft(const ChannelMatrix& h_tilde);

/// Keeps the first na delay rows.
AngularDelayMatrix truncate(const ChannelMatrix& h_tilde, int64_t na);

/// Re-embeds a truncated matrix in an nc-row grid with zero tail rows.
ChannelMatrix zero_pad_delay(const AngularDelayMatrix& ha, int64_t nc);

enum class SplitTag : uint8_t { Train = 0, Val = 1, Test = 2 };

std::string split_name(SplitTag tag);
SplitTag split_from_name(const std::string& name);

struct GeneratorParams {
  int64_t clusters_min = 2;
  int64_t clusters_max = 5;
  double delay_decay = 2.0;     // exponential tap decay constant, in taps
  double angular_spread = 1.5;  // Gaussian footprint width, in DFT bins
  int64_t nc = 1024;            // subcarrier count of the synthetic channel
};

/// Packed, normalized CSI samples plus everything needed to reproduce and
/// invert them.
struct Dataset {
  Tensor<float> samples;  // [N, 2, na, nt], all values in [0, 1]
  double norm_min = 0.0;
  double norm_max = 1.0;
  uint64_t seed = 0;
  GeneratorParams gen;
  SplitTag split = SplitTag::Train;

  int64_t count() const { return samples.empty() ? 0 : samples.dim(0); }
  int64_t na() const { return samples.dim(2); }
  int64_t nt() const { return samples.dim(3); }
};

/// Raw frequency-spatial channel for one sample: a few clusters with complex
/// Gaussian amplitude, an exponentially decaying delay profile confined to
/// the leading taps, a Gaussian angular footprint and a linear phase ramp,
/// synthesized in the angular-delay domain and inverse-transformed.
/// Deterministic per (seed, index).
ChannelMatrix synth_sample_channel(const GeneratorParams& params, uint64_t seed, int64_t index,
                                   int64_t na, int64_t nt);

/// Synthesizes a block-sparse CSI dataset: every sample from
/// synth_sample_channel is pushed through the DFT + truncation path, then the
/// whole set is min-max normalized. Deterministic per seed regardless of
/// worker count.
Dataset synth_generate(int64_t n_samples, const GeneratorParams& params, uint64_t seed,
                       int64_t na, int64_t nt, SplitTag split = SplitTag::Train);

/// Copy of the sample range [begin, end); normalization metadata carries
/// over so denormalization stays consistent across slices.
Dataset dataset_slice(const Dataset& ds, int64_t begin, int64_t end);

/// Global min-max map onto [0, 1]. Fails on constant data.
void normalize_to_unit(Tensor<float>& samples, double& min_out, double& max_out);
Tensor<float> denormalize(const Tensor<float>& t, double norm_min, double norm_max);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace dcrnet
