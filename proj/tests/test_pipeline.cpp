#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>

#include "dcrnet/errors.hpp"
#include "dcrnet/pipeline.hpp"
#include "dcrnet/rng.hpp"

using namespace dcrnet;

namespace {

ChannelMatrix random_channel(int64_t nc, int64_t nt, uint64_t seed) {
  Rng rng(seed);
  ChannelMatrix h(nc, nt);
  for (auto& v : h.data) {
    v = std::complex<float>(static_cast<float>(rng.normal()), static_cast<float>(rng.normal()));
  }
  return h;
}

double max_abs_diff(const ChannelMatrix& a, const ChannelMatrix& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, static_cast<double>(std::abs(a.data[i] - b.data[i])));
  }
  return m;
}

}  // namespace

TEST_CASE("dft_1d agrees with the transform definition") {
  for (int64_t n : {8, 16, 12, 7, 32}) {  // both radix-2 and direct paths
    Rng rng(77 + n);
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    std::vector<std::complex<double>> got = x;
    dft_1d(got.data(), n, false);
    for (int64_t k = 0; k < n; ++k) {
      std::complex<double> acc(0, 0);
      for (int64_t j = 0; j < n; ++j) {
        double ang = -2.0 * M_PI * static_cast<double>(j * k) / static_cast<double>(n);
        acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      acc /= std::sqrt(static_cast<double>(n));
      CHECK(std::abs(got[k] - acc) < 1e-10);
    }
  }
}

TEST_CASE("dft_1d round trips at 64-bit precision") {
  for (int64_t n : {1024, 32, 20}) {
    Rng rng(5 + n);
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    std::vector<std::complex<double>> y = x;
    dft_1d(y.data(), n, false);
    dft_1d(y.data(), n, true);
    for (int64_t i = 0; i < n; ++i) CHECK(std::abs(y[i] - x[i]) < 1e-10);
  }
}

TEST_CASE("2-D transform is unitary and exactly invertible at 32-bit storage") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    ChannelMatrix h = random_channel(256, 32, 1000 + seed);
    ChannelMatrix ht = dft_transform(h);
    CHECK(std::abs(ht.frobenius_norm() - h.frobenius_norm()) <
          1e-4 * h.frobenius_norm());
    ChannelMatrix back = inverse_dft(ht);
    CHECK(max_abs_diff(h, back) < 1e-5);
  }
  ChannelMatrix zero(64, 8);
  ChannelMatrix zt = dft_transform(zero);
  for (const auto& v : zt.data) CHECK(std::abs(v) == 0.0f);
}

TEST_CASE("a single-path channel concentrates on one angular-delay entry") {
  int64_t nc = 64, nt = 16, tau = 5, theta = 3;
  ChannelMatrix h(nc, nt);
  for (int64_t n = 0; n < nc; ++n) {
    for (int64_t t = 0; t < nt; ++t) {
      double ang = -2.0 * M_PI * (static_cast<double>(n * tau) / nc +
                                  static_cast<double>(t * theta) / nt);
      h.at(n, t) = std::complex<float>(static_cast<float>(std::cos(ang)),
                                       static_cast<float>(std::sin(ang)));
    }
  }
  ChannelMatrix ht = dft_transform(h);
  int64_t peak_r = (nc - tau) % nc, peak_c = (nt - theta) % nt;
  double peak = std::abs(ht.at(peak_r, peak_c));
  CHECK(peak == doctest::Approx(std::sqrt(double(nc * nt))).epsilon(1e-4));
  for (int64_t r = 0; r < nc; ++r) {
    for (int64_t c = 0; c < nt; ++c) {
      if (r == peak_r && c == peak_c) continue;
      CHECK(std::abs(ht.at(r, c)) < 1e-4 * peak);
    }
  }
}

TEST_CASE("truncation keeps the leading delay rows") {
  ChannelMatrix h = random_channel(1024, 32, 3);
  AngularDelayMatrix ha = truncate(h, 32);
  CHECK(ha.na == 32);
  CHECK(ha.nt == 32);
  CHECK(ha.at(5, 7) == h.at(5, 7));

  AngularDelayMatrix full = truncate(h, 1024);
  for (size_t i = 0; i < h.data.size(); ++i) CHECK(full.data[i] == h.data[i]);

  CHECK_THROWS_AS(truncate(h, 2048), ConfigError);
  CHECK_THROWS_AS(truncate(h, 0), ConfigError);
}

TEST_CASE("truncate-then-pad is a projection") {
  ChannelMatrix h = random_channel(128, 16, 9);
  auto project = [](const ChannelMatrix& m) { return zero_pad_delay(truncate(m, 24), m.nc); };
  ChannelMatrix once = project(h);
  ChannelMatrix twice = project(once);
  CHECK(max_abs_diff(once, twice) == 0.0);
  for (int64_t r = 24; r < 128; ++r) {
    for (int64_t c = 0; c < 16; ++c) CHECK(std::abs(once.at(r, c)) == 0.0f);
  }
}

TEST_CASE("real view round trips losslessly") {
  ChannelMatrix h = random_channel(64, 8, 11);
  AngularDelayMatrix ha = truncate(h, 16);
  Tensor<float> view = ha.real_view();
  CHECK(view.shape() == std::vector<int64_t>{2, 16, 8});
  AngularDelayMatrix back = AngularDelayMatrix::from_real_view(view);
  for (size_t i = 0; i < ha.data.size(); ++i) {
    CHECK(ha.data[i].real() == back.data[i].real());
    CHECK(ha.data[i].imag() == back.data[i].imag());
  }
}

TEST_CASE("generator is deterministic per seed and differs across seeds") {
  GeneratorParams params;
  params.nc = 128;
  Dataset a = synth_generate(16, params, 42, 16, 16);
  Dataset b = synth_generate(16, params, 42, 16, 16);
  Dataset c = synth_generate(16, params, 43, 16, 16);
  CHECK(bit_equal(a.samples, b.samples));
  CHECK(a.norm_min == b.norm_min);
  CHECK(a.norm_max == b.norm_max);
  CHECK(!bit_equal(a.samples, c.samples));
}

TEST_CASE("generated samples are block sparse") {
  GeneratorParams params;  // defaults, as used by the CLI
  Dataset ds = synth_generate(1000, params, 7, 32, 32, SplitTag::Train);
  // Work on denormalized magnitudes: fraction of entries below 1% of the
  // per-sample peak magnitude, averaged over samples.
  int64_t plane = 32 * 32;
  double frac_sum = 0.0;
  for (int64_t s = 0; s < ds.count(); ++s) {
    const float* re = ds.samples.data() + s * 2 * plane;
    const float* im = re + plane;
    double lo = ds.norm_min, range = ds.norm_max - ds.norm_min;
    double peak = 0.0;
    std::vector<double> mag(static_cast<size_t>(plane));
    for (int64_t i = 0; i < plane; ++i) {
      double r = lo + range * re[i];
      double q = lo + range * im[i];
      mag[static_cast<size_t>(i)] = std::sqrt(r * r + q * q);
      peak = std::max(peak, mag[static_cast<size_t>(i)]);
    }
    int64_t below = 0;
    for (double m : mag) below += m < 0.01 * peak;
    frac_sum += static_cast<double>(below) / static_cast<double>(plane);
  }
  double mean_frac = frac_sum / static_cast<double>(ds.count());
  INFO("mean near-zero fraction: ", mean_frac);
  CHECK(mean_frac >= 0.5);
}

TEST_CASE("truncation retains at least 95 percent of the energy") {
  GeneratorParams params;
  double retained = 0.0, total = 0.0;
  for (int64_t idx = 0; idx < 50; ++idx) {
    ChannelMatrix raw = synth_sample_channel(params, 99, idx, 32, 32);
    ChannelMatrix ht = dft_transform(raw);
    for (int64_t r = 0; r < ht.nc; ++r) {
      for (int64_t c = 0; c < ht.nt; ++c) {
        double e = std::norm(std::complex<double>(ht.at(r, c).real(), ht.at(r, c).imag()));
        total += e;
        if (r < 32) retained += e;
      }
    }
  }
  CHECK(retained / total >= 0.95);
}

TEST_CASE("normalization maps to the unit interval and inverts") {
  SUBCASE("hand case: min -1, max 3, value 1 maps to 0.5") {
    Tensor<float> t({4}, {-1.0f, 3.0f, 1.0f, 0.0f});
    double lo, hi;
    normalize_to_unit(t, lo, hi);
    CHECK(lo == -1.0);
    CHECK(hi == 3.0);
    CHECK(t[2] == doctest::Approx(0.5));
    Tensor<float> back = denormalize(t, lo, hi);
    CHECK(back[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(back[2] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("constant data is rejected") {
    Tensor<float> t = Tensor<float>::full({8}, 2.5f);
    double lo, hi;
    CHECK_THROWS_AS(normalize_to_unit(t, lo, hi), DataError);
  }
  SUBCASE("generated datasets live in [0,1] and invert within 1e-6") {
    GeneratorParams params;
    params.nc = 128;
    Dataset ds = synth_generate(8, params, 13, 16, 16);
    for (int64_t i = 0; i < ds.samples.numel(); ++i) {
      CHECK(ds.samples[i] >= 0.0f);
      CHECK(ds.samples[i] <= 1.0f);
    }
    Tensor<float> denorm = denormalize(ds.samples, ds.norm_min, ds.norm_max);
    Tensor<float> renorm = denorm;
    double lo, hi;
    normalize_to_unit(renorm, lo, hi);
    for (int64_t i = 0; i < renorm.numel(); ++i) {
      CHECK(std::abs(renorm[i] - ds.samples[i]) < 1e-6f);
    }
  }
}

TEST_CASE("generator rejects degenerate parameters") {
  GeneratorParams params;
  params.clusters_min = 0;
  params.clusters_max = 0;
  CHECK_THROWS_AS(synth_generate(4, params, 1, 16, 16), ConfigError);
  GeneratorParams params2;
  CHECK_THROWS_AS(synth_generate(0, params2, 1, 16, 16), ConfigError);
}

TEST_CASE("dataset files round trip") {
  GeneratorParams params;
  params.nc = 128;
  params.delay_decay = 1.5;
  Dataset ds = synth_generate(12, params, 31, 16, 16, SplitTag::Val);
  save_dataset(ds, "pipeline_test_ds.dcrd");
  Dataset loaded = load_dataset("pipeline_test_ds.dcrd");
  CHECK(bit_equal(ds.samples, loaded.samples));
  CHECK(loaded.norm_min == ds.norm_min);
  CHECK(loaded.norm_max == ds.norm_max);
  CHECK(loaded.seed == ds.seed);
  CHECK(loaded.split == SplitTag::Val);
  CHECK(loaded.gen.delay_decay == 1.5);
  std::remove("pipeline_test_ds.dcrd");

  CHECK_THROWS_AS(load_dataset("missing.dcrd"), DataError);
  FILE* f = std::fopen("pipeline_test_bad.dcrd", "wb");
  std::fputs("NOTADATASET", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_dataset("pipeline_test_bad.dcrd"), DataError);
  std::remove("pipeline_test_bad.dcrd");
}
