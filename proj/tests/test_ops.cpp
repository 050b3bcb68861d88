#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dcrnet/errors.hpp"
#include "dcrnet/ops.hpp"
#include "dcrnet/rng.hpp"
#include "oracles.hpp"

using namespace dcrnet;
using dcrnet::testing::naive_conv2d;
using dcrnet::testing::random_tensor;

TEST_CASE("effective kernel size") {
  ConvSpec s = ConvSpec::same_padded(1, 1, 3, 3, 2, 2);
  CHECK(s.effective_kh() == 5);
  CHECK(s.effective_kw() == 5);
  CHECK(ConvSpec::same_padded(1, 1, 3, 3, 3, 3).effective_kh() == 7);
  CHECK(ConvSpec::same_padded(1, 1, 1, 1, 7, 7).effective_kh() == 1);
  CHECK(ConvSpec::same_padded(1, 1, 1, 3, 2, 2).effective_kh() == 1);
  CHECK(ConvSpec::same_padded(1, 1, 1, 3, 2, 2).effective_kw() == 5);
}

TEST_CASE("same padding keeps spatial size") {
  Rng rng(7);
  for (auto [kh, kw, d] : {std::array<int64_t, 3>{3, 3, 1}, {3, 3, 2}, {1, 3, 3}, {3, 1, 2},
                           {5, 5, 1}, {1, 5, 1}}) {
    ConvSpec s = ConvSpec::same_padded(2, 2, kh, kw, d, d);
    Tensor<float> x = random_tensor<float>({1, 2, 16, 16}, rng);
    Tensor<float> w = random_tensor<float>({2, 2, kh, kw}, rng);
    Tensor<float> y = conv2d_forward(x, w, s);
    CHECK(y.shape() == std::vector<int64_t>{1, 2, 16, 16});
  }
}

TEST_CASE("conv spec validation") {
  ConvSpec s;
  s.in_channels = 4;
  s.out_channels = 2;
  s.groups = 3;  // does not divide either channel count
  CHECK_THROWS_AS(s.validate(), ConfigError);

  ConvSpec ok = ConvSpec::same_padded(2, 2, 3, 3);
  Tensor<float> x({1, 3, 8, 8});  // wrong channel count
  Tensor<float> w({2, 2, 3, 3});
  CHECK_THROWS_AS(conv2d_forward(x, w, ok), DimensionError);

  Tensor<float> x2({1, 2, 8, 8});
  Tensor<float> w_bad({2, 2, 5, 5});  // weight does not match spec kernel
  CHECK_THROWS_AS(conv2d_forward(x2, w_bad, ok), DimensionError);
}

TEST_CASE("1x1 identity convolution") {
  Rng rng(3);
  Tensor<float> x = random_tensor<float>({2, 1, 5, 7}, rng);
  Tensor<float> w({1, 1, 1, 1}, {1.0f});
  ConvSpec s = ConvSpec::same_padded(1, 1, 1, 1);
  Tensor<float> y = conv2d_forward(x, w, s);
  CHECK(bit_equal(x, y));
}

TEST_CASE("conv2d matches the direct nested-loop evaluation") {
  // The spec'd case: random 1x4x6x6 input, 3x3 kernel, d=2.
  Rng rng(11);
  {
    ConvSpec s = ConvSpec::same_padded(4, 2, 3, 3, 2, 2);
    Tensor<float> x = random_tensor<float>({1, 4, 6, 6}, rng);
    Tensor<float> w = random_tensor<float>({2, 4, 3, 3}, rng);
    CHECK(bit_equal(conv2d_forward(x, w, s), naive_conv2d(x, w, s)));
  }
  // A spread of kernel/dilation/group combinations, including valid padding.
  struct Case {
    int64_t cin, cout, kh, kw, dh, dw, groups, ph, pw;
  };
  for (const Case& c : {Case{2, 2, 3, 3, 1, 1, 1, 1, 1}, Case{4, 4, 3, 1, 3, 3, 4, 3, 0},
                        Case{4, 2, 1, 3, 2, 2, 2, 0, 2}, Case{8, 8, 5, 1, 1, 1, 8, 2, 0},
                        Case{2, 8, 3, 3, 2, 2, 1, 2, 2}, Case{6, 4, 3, 3, 1, 1, 2, 0, 0}}) {
    ConvSpec s;
    s.in_channels = c.cin;
    s.out_channels = c.cout;
    s.kh = c.kh;
    s.kw = c.kw;
    s.dh = c.dh;
    s.dw = c.dw;
    s.groups = c.groups;
    s.ph = c.ph;
    s.pw = c.pw;
    Tensor<float> x = random_tensor<float>({2, c.cin, 9, 9}, rng);
    Tensor<float> w = random_tensor<float>({c.cout, c.cin / c.groups, c.kh, c.kw}, rng);
    CHECK(bit_equal(conv2d_forward(x, w, s), naive_conv2d(x, w, s)));
  }
}

TEST_CASE("dilation one degenerates to the standard convolution") {
  Rng rng(23);
  for (int seed = 0; seed < 5; ++seed) {
    ConvSpec s = ConvSpec::same_padded(3, 5, 3, 3, 1, 1);
    Tensor<float> x = random_tensor<float>({2, 3, 12, 12}, rng);
    Tensor<float> w = random_tensor<float>({5, 3, 3, 3}, rng);
    CHECK(bit_equal(conv2d_forward(x, w, s), naive_conv2d(x, w, s)));
  }
}

TEST_CASE("depthwise groups equal independent single-channel convolutions") {
  Rng rng(31);
  int64_t c = 6;
  ConvSpec grouped = ConvSpec::same_padded(c, c, 3, 3, 2, 2, c);
  Tensor<float> x = random_tensor<float>({2, c, 10, 10}, rng);
  Tensor<float> w = random_tensor<float>({c, 1, 3, 3}, rng);
  Tensor<float> y = conv2d_forward(x, w, grouped);

  ConvSpec single = ConvSpec::same_padded(1, 1, 3, 3, 2, 2);
  for (int64_t ch = 0; ch < c; ++ch) {
    Tensor<float> xc({2, 1, 10, 10});
    Tensor<float> wc({1, 1, 3, 3});
    for (int64_t n = 0; n < 2; ++n) {
      for (int64_t i = 0; i < 10; ++i) {
        for (int64_t j = 0; j < 10; ++j) xc.at4(n, 0, i, j) = x.at4(n, ch, i, j);
      }
    }
    for (int64_t u = 0; u < 3; ++u) {
      for (int64_t v = 0; v < 3; ++v) wc.at4(0, 0, u, v) = w.at4(ch, 0, u, v);
    }
    Tensor<float> yc = conv2d_forward(xc, wc, single);
    for (int64_t n = 0; n < 2; ++n) {
      for (int64_t i = 0; i < 10; ++i) {
        for (int64_t j = 0; j < 10; ++j) {
          CHECK(y.at4(n, ch, i, j) == yc.at4(n, 0, i, j));
        }
      }
    }
  }
}

TEST_CASE("asymmetric pair footprint spans the effective square kernel") {
  // (1xk then kx1) at dilation d applied to a centered impulse lights the
  // k x k dilated lattice whose bounding box is k' x k' (Eq.-style RF law).
  for (int64_t d : {1, 2, 3}) {
    int64_t k = 3;
    int64_t keff = k + (k - 1) * (d - 1);
    Tensor<float> x({1, 1, 21, 21});
    x.at4(0, 0, 10, 10) = 1.0f;
    Tensor<float> w_row = Tensor<float>::ones({1, 1, 1, k});
    Tensor<float> w_col = Tensor<float>::ones({1, 1, k, 1});
    Tensor<float> mid = conv2d_forward(x, w_row, ConvSpec::same_padded(1, 1, 1, k, d, d));
    Tensor<float> out = conv2d_forward(mid, w_col, ConvSpec::same_padded(1, 1, k, 1, d, d));
    int64_t lit = 0, span_i_min = 21, span_i_max = -1, span_j_min = 21, span_j_max = -1;
    for (int64_t i = 0; i < 21; ++i) {
      for (int64_t j = 0; j < 21; ++j) {
        bool on = std::abs(out.at4(0, 0, i, j)) > 1e-6f;
        bool expect = (i - 10) % d == 0 && (j - 10) % d == 0 &&
                      std::abs(i - 10) <= (keff - 1) / 2 && std::abs(j - 10) <= (keff - 1) / 2;
        CHECK(on == expect);
        if (on) {
          ++lit;
          span_i_min = std::min(span_i_min, i);
          span_i_max = std::max(span_i_max, i);
          span_j_min = std::min(span_j_min, j);
          span_j_max = std::max(span_j_max, j);
        }
      }
    }
    CHECK(lit == k * k);
    CHECK(span_i_max - span_i_min + 1 == keff);
    CHECK(span_j_max - span_j_min + 1 == keff);
  }
}

TEST_CASE("linear layer") {
  SUBCASE("identity weight and zero bias pass the input through") {
    Rng rng(5);
    Tensor<float> x = random_tensor<float>({3, 4}, rng);
    Tensor<float> w({4, 4});
    for (int64_t i = 0; i < 4; ++i) w.at2(i, i) = 1.0f;
    Tensor<float> b({4});
    CHECK(bit_equal(linear_forward(x, w, b), x));
  }
  SUBCASE("random 2x3 case against a hand-computed product") {
    Tensor<float> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<float> w({2, 3}, {1, 0, -1, 0.5f, 0.5f, 0.5f});
    Tensor<float> b({2}, {10, -10});
    Tensor<float> y = linear_forward(x, w, b);
    CHECK(y.at2(0, 0) == doctest::Approx(1 - 3 + 10));
    CHECK(y.at2(0, 1) == doctest::Approx(0.5 * (1 + 2 + 3) - 10));
    CHECK(y.at2(1, 0) == doctest::Approx(4 - 6 + 10));
    CHECK(y.at2(1, 1) == doctest::Approx(0.5 * (4 + 5 + 6) - 10));
  }
  SUBCASE("parameter count of the compression pair") {
    // 2048 -> 512 with bias.
    CHECK(int64_t(2048) * 512 + 512 == 1049088);
  }
  SUBCASE("dimension mismatch") {
    Tensor<float> x({2, 3});
    Tensor<float> w({4, 5});
    Tensor<float> b({4});
    CHECK_THROWS_AS(linear_forward(x, w, b), DimensionError);
  }
}

TEST_CASE("prelu values") {
  Tensor<float> x({5}, {2.0f, -3.0f, 0.0f, 1.5f, -0.5f});
  SUBCASE("positive passthrough, Eq-style negative slope") {
    Tensor<float> y = prelu_forward(x, 0.25f);
    CHECK(y[0] == 2.0f);
    CHECK(y[1] == doctest::Approx(-0.75f));
    CHECK(y[2] == 0.0f);
    CHECK(y[4] == doctest::Approx(-0.125f));
  }
  SUBCASE("alpha 0 is ReLU, alpha 1 is identity") {
    Tensor<float> relu = prelu_forward(x, 0.0f);
    CHECK(relu[1] == 0.0f);
    CHECK(relu[3] == 1.5f);
    CHECK(bit_equal(prelu_forward(x, 1.0f), x));
  }
}

TEST_CASE("batchnorm2d") {
  Rng rng(17);
  SUBCASE("eval mode with unit running stats is the identity up to epsilon") {
    Tensor<float> x = random_tensor<float>({2, 3, 4, 4}, rng);
    Tensor<float> gamma = Tensor<float>::ones({3});
    Tensor<float> beta({3});
    Tensor<float> rm({3});
    Tensor<float> rv = Tensor<float>::ones({3});
    BnSaved<float> saved;
    Tensor<float> y =
        batchnorm2d_forward(x, gamma, beta, rm, rv, 0.1f, 1e-5f, false, saved);
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-4));
    }
  }
  SUBCASE("train mode output has mean beta and variance gamma^2") {
    Tensor<float> x = random_tensor<float>({4, 2, 8, 8}, rng, 3.0);
    Tensor<float> gamma({2}, {1.5f, 0.5f});
    Tensor<float> beta({2}, {-1.0f, 2.0f});
    Tensor<float> rm({2});
    Tensor<float> rv = Tensor<float>::ones({2});
    BnSaved<float> saved;
    Tensor<float> y = batchnorm2d_forward(x, gamma, beta, rm, rv, 0.1f, 1e-5f, true, saved);
    for (int64_t c = 0; c < 2; ++c) {
      double sum = 0.0, sq = 0.0;
      int64_t m = 0;
      for (int64_t n = 0; n < 4; ++n) {
        for (int64_t i = 0; i < 8; ++i) {
          for (int64_t j = 0; j < 8; ++j) {
            double v = y.at4(n, c, i, j);
            sum += v;
            sq += v * v;
            ++m;
          }
        }
      }
      double mean = sum / m;
      double var = sq / m - mean * mean;
      CHECK(mean == doctest::Approx(beta[c]).epsilon(1e-4));
      CHECK(var == doctest::Approx(gamma[c] * gamma[c]).epsilon(1e-3));
    }
  }
  SUBCASE("zero variance input normalizes without a fault") {
    Tensor<float> x = Tensor<float>::full({2, 1, 3, 3}, 4.0f);
    Tensor<float> gamma = Tensor<float>::ones({1});
    Tensor<float> beta({1}, {7.0f});
    Tensor<float> rm({1});
    Tensor<float> rv = Tensor<float>::ones({1});
    BnSaved<float> saved;
    Tensor<float> y = batchnorm2d_forward(x, gamma, beta, rm, rv, 0.1f, 1e-5f, true, saved);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(7.0f));
  }
  SUBCASE("train mode requires at least two values per channel") {
    Tensor<float> x({1, 2, 1, 1});
    Tensor<float> gamma = Tensor<float>::ones({2});
    Tensor<float> beta({2});
    Tensor<float> rm({2});
    Tensor<float> rv = Tensor<float>::ones({2});
    BnSaved<float> saved;
    CHECK_THROWS_AS(batchnorm2d_forward(x, gamma, beta, rm, rv, 0.1f, 1e-5f, true, saved),
                    UsageError);
  }
}

TEST_CASE("concat_channels") {
  Rng rng(29);
  Tensor<float> a = random_tensor<float>({1, 2, 32, 32}, rng);
  Tensor<float> b = random_tensor<float>({1, 2, 32, 32}, rng);
  Tensor<float> y = concat_channels_forward(a, b);
  CHECK(y.shape() == std::vector<int64_t>{1, 4, 32, 32});
  CHECK(y.at4(0, 0, 3, 4) == a.at4(0, 0, 3, 4));
  CHECK(y.at4(0, 2, 3, 4) == b.at4(0, 0, 3, 4));

  Tensor<float> c({1, 2, 16, 32});
  CHECK_THROWS_AS(concat_channels_forward(a, c), DimensionError);

  // Channel counts below one are unrepresentable by construction.
  CHECK_THROWS_AS(Tensor<float>({1, 0, 32, 32}), DimensionError);
}

TEST_CASE("add and mse") {
  Tensor<float> x({2}, {2.0f, 4.0f});
  Tensor<float> z({2});
  CHECK(mse_loss_forward(x, x)[0] == 0.0f);
  CHECK(mse_loss_forward(x, z)[0] == doctest::Approx(10.0));

  Tensor<float> y({2}, {1.0f, -1.0f});
  Tensor<float> s = add_forward(x, y);
  CHECK(s[0] == 3.0f);
  CHECK(s[1] == 3.0f);
  Tensor<float> bad({3});
  CHECK_THROWS_AS(add_forward(x, bad), DimensionError);
  CHECK_THROWS_AS(mse_loss_forward(x, bad), DimensionError);
}

TEST_CASE("reshape round trip is the identity") {
  Rng rng(41);
  for (int seed = 0; seed < 8; ++seed) {
    Tensor<float> x = random_tensor<float>({2, 3, 4}, rng);
    Tensor<float> y = x.reshaped({4, 6}).reshaped({24}).reshaped({2, 3, 4});
    CHECK(bit_equal(x, y));
  }
  Tensor<float> x({2, 3});
  CHECK_THROWS_AS(x.reshaped({7}), DimensionError);
}
