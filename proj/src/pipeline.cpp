#include "dcrnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dcrnet/errors.hpp"
#include "dcrnet/rng.hpp"
#include "dcrnet/serialize.hpp"
#include "dcrnet/threading.hpp"

namespace dcrnet {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kDatasetMagic[4] = {'D', 'C', 'R', 'D'};
constexpr uint32_t kDatasetVersion = 1;

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

template <typename T>
void fft_pow2(std::complex<T>* a, int64_t n, bool inverse) {
  // Bit-reversal permutation.
  for (int64_t i = 1, j = 0; i < n; ++i) {
    int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int64_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<T> wlen(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    for (int64_t i = 0; i < n; i += len) {
      std::complex<T> w(1);
      for (int64_t k = 0; k < len / 2; ++k) {
        std::complex<T> u = a[i + k];
        std::complex<T> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

template <typename T>
void dft_direct(std::complex<T>* a, int64_t n, bool inverse) {
  std::vector<std::complex<T>> out(static_cast<size_t>(n));
  double sign = inverse ? 1.0 : -1.0;
  for (int64_t k = 0; k < n; ++k) {
    std::complex<double> acc(0, 0);
    for (int64_t j = 0; j < n; ++j) {
      double ang = sign * 2.0 * kPi * static_cast<double>(k * j % n) / static_cast<double>(n);
      std::complex<double> tw(std::cos(ang), std::sin(ang));
      acc += std::complex<double>(a[j].real(), a[j].imag()) * tw;
    }
    out[static_cast<size_t>(k)] =
        std::complex<T>(static_cast<T>(acc.real()), static_cast<T>(acc.imag()));
  }
  std::copy(out.begin(), out.end(), a);
}

// 2-D unitary transform on a row-major rows x cols grid, in double precision.
void transform_2d(std::vector<std::complex<double>>& grid, int64_t rows, int64_t cols,
                  bool inverse) {
  std::vector<std::complex<double>> scratch(static_cast<size_t>(rows));
  // Columns: length-`rows` transforms.
  for (int64_t c = 0; c < cols; ++c) {
    for (int64_t r = 0; r < rows; ++r) scratch[static_cast<size_t>(r)] = grid[r * cols + c];
    dft_1d(scratch.data(), rows, inverse);
    for (int64_t r = 0; r < rows; ++r) grid[r * cols + c] = scratch[static_cast<size_t>(r)];
  }
  // Rows: length-`cols` transforms.
  for (int64_t r = 0; r < rows; ++r) {
    dft_1d(grid.data() + r * cols, cols, inverse);
  }
}

ChannelMatrix transform_channel(const ChannelMatrix& in, bool inverse) {
  if (in.nc < 1 || in.nt < 1) throw DimensionError("channel matrix is empty");
  std::vector<std::complex<double>> grid(in.data.size());
  for (size_t i = 0; i < in.data.size(); ++i) {
    grid[i] = std::complex<double>(in.data[i].real(), in.data[i].imag());
  }
  transform_2d(grid, in.nc, in.nt, inverse);
  ChannelMatrix out(in.nc, in.nt);
  for (size_t i = 0; i < grid.size(); ++i) {
    out.data[i] = std::complex<float>(static_cast<float>(grid[i].real()),
                                      static_cast<float>(grid[i].imag()));
  }
  return out;
}

}  // namespace

template <typename T>
void dft_1d(std::complex<T>* data, int64_t n, bool inverse) {
  if (n < 1) throw DimensionError("dft length must be >= 1");
  if (is_pow2(n)) {
    fft_pow2(data, n, inverse);
  } else {
    dft_direct(data, n, inverse);
  }
  T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(n)));
  for (int64_t i = 0; i < n; ++i) data[i] *= scale;
}

template void dft_1d<float>(std::complex<float>*, int64_t, bool);
template void dft_1d<double>(std::complex<double>*, int64_t, bool);

double ChannelMatrix::frobenius_norm() const {
  double acc = 0.0;
  for (const auto& v : data) {
    acc += static_cast<double>(v.real()) * v.real() + static_cast<double>(v.imag()) * v.imag();
  }
  return std::sqrt(acc);
}

Tensor<float> AngularDelayMatrix::real_view() const {
  Tensor<float> out = Tensor<float>::uninitialized({2, na, nt});
  float* re = out.data();
  float* im = out.data() + na * nt;
  for (size_t i = 0; i < data.size(); ++i) {
    re[i] = data[i].real();
    im[i] = data[i].imag();
  }
  return out;
}

AngularDelayMatrix AngularDelayMatrix::from_real_view(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 2) {
    throw DimensionError("real view must be [2, na, nt], got (" +
                         Tensor<float>::shape_string(t.shape()) + ")");
  }
  AngularDelayMatrix out(t.dim(1), t.dim(2));
  const float* re = t.data();
  const float* im = t.data() + out.na * out.nt;
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = std::complex<float>(re[i], im[i]);
  }
  return out;
}

ChannelMatrix dft_transform(const ChannelMatrix& h) { return transform_channel(h, false); }

ChannelMatrix inverse_dft(const ChannelMatrix& h_tilde) {
  return transform_channel(h_tilde, true);
}

AngularDelayMatrix truncate(const ChannelMatrix& h_tilde, int64_t na) {
  if (na < 1 || na > h_tilde.nc) {
    throw ConfigError("truncation rows " + std::to_string(na) + " must lie in [1, " +
                      std::to_string(h_tilde.nc) + "]");
  }
  AngularDelayMatrix out(na, h_tilde.nt);
  std::copy(h_tilde.data.begin(), h_tilde.data.begin() + na * h_tilde.nt, out.data.begin());
  return out;
}

ChannelMatrix zero_pad_delay(const AngularDelayMatrix& ha, int64_t nc) {
  if (nc < ha.na) throw ConfigError("zero_pad_delay target rows smaller than source");
  ChannelMatrix out(nc, ha.nt);
  std::copy(ha.data.begin(), ha.data.end(), out.data.begin());
  return out;
}

std::string split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train:
      return "train";
    case SplitTag::Val:
      return "val";
    case SplitTag::Test:
      return "test";
  }
  return "train";
}

SplitTag split_from_name(const std::string& name) {
  if (name == "train") return SplitTag::Train;
  if (name == "val") return SplitTag::Val;
  if (name == "test") return SplitTag::Test;
  throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

namespace {

void check_generator_params(const GeneratorParams& params, int64_t na, int64_t nt) {
  if (params.clusters_min < 1 || params.clusters_max < params.clusters_min) {
    throw ConfigError("cluster range [" + std::to_string(params.clusters_min) + ", " +
                      std::to_string(params.clusters_max) + "] is degenerate");
  }
  if (params.delay_decay <= 0.0 || params.angular_spread <= 0.0) {
    throw ConfigError("delay decay and angular spread must be positive");
  }
  if (na < 1 || nt < 1 || params.nc < na) {
    throw ConfigError("need nc >= na >= 1 and nt >= 1");
  }
}

}  // namespace

ChannelMatrix synth_sample_channel(const GeneratorParams& params, uint64_t seed, int64_t index,
                                   int64_t na, int64_t nt) {
  check_generator_params(params, na, nt);
  int64_t nc = params.nc;
  Rng rng(mix_seed(seed, static_cast<uint64_t>(index)));
  std::vector<std::complex<double>> grid(static_cast<size_t>(nc * nt), {0.0, 0.0});

  int64_t clusters = rng.uniform_int(params.clusters_min, params.clusters_max);
  double amp_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(clusters));
  for (int64_t c = 0; c < clusters; ++c) {
    std::complex<double> amp(rng.normal() * amp_scale, rng.normal() * amp_scale);
    double tau_c = rng.uniform(0.0, 0.4 * static_cast<double>(na));
    double tau_d = params.delay_decay * (0.5 + rng.uniform());
    double theta_c = rng.uniform(0.0, static_cast<double>(nt));
    double sigma = params.angular_spread * (0.5 + rng.uniform());
    double f_tau = rng.uniform(-0.5, 0.5);
    double f_theta = rng.uniform(-0.5, 0.5);

    int64_t t_begin = static_cast<int64_t>(std::floor(tau_c));
    int64_t reach = static_cast<int64_t>(std::ceil(4.0 * sigma));
    for (int64_t t = std::max<int64_t>(0, t_begin); t < nc; ++t) {
      double dt = static_cast<double>(t) - tau_c;
      if (dt < 0.0) dt = 0.0;
      double env_t = std::exp(-dt / tau_d);
      if (env_t < 1e-6) break;
      for (int64_t off = -reach; off <= reach; ++off) {
        double da = static_cast<double>(off) + std::floor(theta_c) - theta_c;
        int64_t a = static_cast<int64_t>(std::floor(theta_c)) + off;
        a = ((a % nt) + nt) % nt;  // the angular axis wraps
        double env_a = std::exp(-da * da / (2.0 * sigma * sigma));
        double phase = 2.0 * kPi * (f_tau * dt + f_theta * da);
        std::complex<double> ph(std::cos(phase), std::sin(phase));
        grid[static_cast<size_t>(t * nt + a)] += amp * env_t * env_a * ph;
      }
    }
  }

  // Equalize per-sample energy up to a few dB of jitter. Cluster amplitudes
  // alone would spread sample power over orders of magnitude, which both
  // starves the optimizer and lets near-empty samples dominate a mean of
  // per-sample error ratios.
  double energy = 0.0;
  for (const auto& v : grid) energy += std::norm(v);
  if (energy > 0.0) {
    double target = std::exp(rng.uniform(-0.4, 0.4));
    double scale = std::sqrt(target / energy);
    for (auto& v : grid) v *= scale;
  }

  ChannelMatrix sparse(nc, nt);
  for (size_t i = 0; i < grid.size(); ++i) {
    sparse.data[i] = std::complex<float>(static_cast<float>(grid[i].real()),
                                         static_cast<float>(grid[i].imag()));
  }
  return inverse_dft(sparse);
}

Dataset synth_generate(int64_t n_samples, const GeneratorParams& params, uint64_t seed,
                       int64_t na, int64_t nt, SplitTag split) {
  if (n_samples < 1) throw ConfigError("sample count must be >= 1");
  check_generator_params(params, na, nt);

  Dataset ds;
  ds.samples = Tensor<float>::uninitialized({n_samples, 2, na, nt});
  ds.seed = seed;
  ds.gen = params;
  ds.split = split;

  int64_t plane = na * nt;
  parallel_for(0, n_samples, [&](int64_t idx) {
    ChannelMatrix raw = synth_sample_channel(params, seed, idx, na, nt);
    AngularDelayMatrix ha = truncate(dft_transform(raw), na);
    Tensor<float> view = ha.real_view();
    std::memcpy(ds.samples.data() + idx * 2 * plane, view.data(),
                sizeof(float) * static_cast<size_t>(2 * plane));
  });

  normalize_to_unit(ds.samples, ds.norm_min, ds.norm_max);
  return ds;
}

Dataset dataset_slice(const Dataset& ds, int64_t begin, int64_t end) {
  if (begin < 0 || end > ds.count() || begin >= end) {
    throw UsageError("dataset slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + std::to_string(ds.count()) + " samples");
  }
  Dataset out;
  out.norm_min = ds.norm_min;
  out.norm_max = ds.norm_max;
  out.seed = ds.seed;
  out.gen = ds.gen;
  out.split = ds.split;
  int64_t plane = 2 * ds.na() * ds.nt();
  out.samples = Tensor<float>({end - begin, 2, ds.na(), ds.nt()});
  std::memcpy(out.samples.data(), ds.samples.data() + begin * plane,
              sizeof(float) * static_cast<size_t>((end - begin) * plane));
  return out;
}

void normalize_to_unit(Tensor<float>& samples, double& min_out, double& max_out) {
  const float* p = samples.data();
  int64_t n = samples.numel();
  float lo = p[0], hi = p[0];
  for (int64_t i = 1; i < n; ++i) {
    lo = std::min(lo, p[i]);
    hi = std::max(hi, p[i]);
  }
  if (!(hi > lo)) {
    throw DataError("cannot normalize constant data (min == max == " + std::to_string(lo) + ")");
  }
  min_out = static_cast<double>(lo);
  max_out = static_cast<double>(hi);
  float scale = static_cast<float>(1.0 / (max_out - min_out));
  float* q = samples.data();
  for (int64_t i = 0; i < n; ++i) q[i] = (q[i] - lo) * scale;
}

Tensor<float> denormalize(const Tensor<float>& t, double norm_min, double norm_max) {
  Tensor<float> out = Tensor<float>::uninitialized(t.shape());
  const float* p = t.data();
  float* q = out.data();
  float lo = static_cast<float>(norm_min);
  float range = static_cast<float>(norm_max - norm_min);
  for (int64_t i = 0; i < t.numel(); ++i) q[i] = lo + range * p[i];
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& os) {
    os.write(kDatasetMagic, 4);
    write_u32(os, kDatasetVersion);
    write_u8(os, static_cast<uint8_t>(ds.split));
    write_u64(os, static_cast<uint64_t>(ds.count()));
    write_u32(os, static_cast<uint32_t>(ds.na()));
    write_u32(os, static_cast<uint32_t>(ds.nt()));
    write_f64(os, ds.norm_min);
    write_f64(os, ds.norm_max);
    write_u64(os, ds.seed);
    write_u32(os, static_cast<uint32_t>(ds.gen.clusters_min));
    write_u32(os, static_cast<uint32_t>(ds.gen.clusters_max));
    write_f64(os, ds.gen.delay_decay);
    write_f64(os, ds.gen.angular_spread);
    write_u32(os, static_cast<uint32_t>(ds.gen.nc));
    write_tensor(os, ds.samples);
  });
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw DataError(path + " is not a dataset file");
  }
  uint32_t version = read_u32(is);
  if (version != kDatasetVersion) {
    throw DataError("unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  uint8_t split = read_u8(is);
  if (split > 2) throw DataError("dataset split tag out of range");
  ds.split = static_cast<SplitTag>(split);
  uint64_t n = read_u64(is);
  uint32_t na = read_u32(is);
  uint32_t nt = read_u32(is);
  ds.norm_min = read_f64(is);
  ds.norm_max = read_f64(is);
  ds.seed = read_u64(is);
  ds.gen.clusters_min = read_u32(is);
  ds.gen.clusters_max = read_u32(is);
  ds.gen.delay_decay = read_f64(is);
  ds.gen.angular_spread = read_f64(is);
  ds.gen.nc = read_u32(is);
  ds.samples = read_tensor<float>(is);
  std::vector<int64_t> expect = {static_cast<int64_t>(n), 2, static_cast<int64_t>(na),
                                 static_cast<int64_t>(nt)};
  if (ds.samples.shape() != expect) {
    throw DataError("dataset payload shape does not match its header");
  }
  return ds;
}

}  // namespace dcrnet
