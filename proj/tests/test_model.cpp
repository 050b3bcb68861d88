#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "dcrnet/errors.hpp"
#include "dcrnet/model.hpp"
#include "oracles.hpp"

using namespace dcrnet;
using dcrnet::testing::fd_slot;
using dcrnet::testing::random_tensor;
using dcrnet::testing::rel_err;

namespace {

DcrNetConfig small_config() {
  DcrNetConfig cfg;
  cfg.na = 8;
  cfg.nt = 8;
  cfg.eta = EtaRatio{1, 4};
  cfg.rho = 1;
  return cfg;
}

DcrNetConfig paper_config(int64_t eta_den = 4, Ablation ablation = Ablation::Full) {
  DcrNetConfig cfg;
  cfg.eta = EtaRatio{1, eta_den};
  cfg.ablation = ablation;
  return cfg;
}

}  // namespace

TEST_CASE("config validation and codeword lengths") {
  DcrNetConfig cfg = paper_config(4);
  CHECK(cfg.codeword_len() == 512);
  cfg.eta = EtaRatio{1, 32};
  CHECK(cfg.codeword_len() == 64);

  cfg.eta = EtaRatio{1, 5000};  // floor(2048/5000) = 0
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.eta = EtaRatio{3, 2};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.eta = EtaRatio{1, 4};
  cfg.rho = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("eta parsing accepts ratios and decimals") {
  CHECK(EtaRatio::parse("1/4").num == 1);
  CHECK(EtaRatio::parse("1/4").den == 4);
  CHECK(EtaRatio::parse("0.25").num == 1);
  CHECK(EtaRatio::parse("0.25").den == 4);
  CHECK(EtaRatio::parse(" 3/8 ").den == 8);
  CHECK_THROWS_AS(EtaRatio::parse("zero"), ConfigError);
}

TEST_CASE("config files round trip") {
  DcrNetConfig cfg = paper_config(16, Ablation::M1);
  cfg.rho = 4;
  cfg.save("model_test_cfg.txt");
  DcrNetConfig loaded = DcrNetConfig::load("model_test_cfg.txt");
  CHECK(loaded.na == cfg.na);
  CHECK(loaded.eta.num == 1);
  CHECK(loaded.eta.den == 16);
  CHECK(loaded.rho == 4);
  CHECK(loaded.ablation == Ablation::M1);
  std::remove("model_test_cfg.txt");
}

TEST_CASE("build produces the headline compression shapes") {
  DcrNet<float> net = DcrNet<float>::build(paper_config(4), 1);
  CHECK(net.enc_fc.in_features() == 2048);
  CHECK(net.enc_fc.out_features() == 512);
  CHECK(net.dec_fc.in_features() == 512);
  CHECK(net.dec_fc.out_features() == 2048);
}

TEST_CASE("build is deterministic per seed") {
  DcrNet<float> a = DcrNet<float>::build(small_config(), 42);
  DcrNet<float> b = DcrNet<float>::build(small_config(), 42);
  DcrNet<float> c = DcrNet<float>::build(small_config(), 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_differs = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    all_equal = all_equal && bit_equal(pa[i]->value, pb[i]->value);
    any_differs = any_differs || !bit_equal(pa[i]->value, pc[i]->value);
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("parameter names are unique") {
  DcrNet<float> net = DcrNet<float>::build(small_config(), 1);
  std::set<std::string> names;
  for (auto* p : net.parameters()) {
    CHECK(names.insert(p->name).second);
    CHECK(p->value.same_shape(p->grad));
  }
}

TEST_CASE("ablation controls dilation fields only") {
  auto dilations = [](DcrNet<float>& net, bool encoder) {
    std::vector<int64_t> out;
    for (const LayerInfo& l : net.enumerate_layers()) {
      if (l.kind != LayerKind::Conv) continue;
      bool enc = l.name.rfind("encoder", 0) == 0;
      if (enc == encoder) {
        out.push_back(l.conv.dh);
        out.push_back(l.conv.dw);
      }
    }
    return out;
  };
  DcrNet<float> base = DcrNet<float>::build(paper_config(4, Ablation::Baseline), 1);
  for (int64_t d : dilations(base, true)) CHECK(d == 1);
  for (int64_t d : dilations(base, false)) CHECK(d == 1);

  DcrNet<float> m1 = DcrNet<float>::build(paper_config(4, Ablation::M1), 1);
  auto enc = dilations(m1, true);
  CHECK(*std::max_element(enc.begin(), enc.end()) == 3);
  for (int64_t d : dilations(m1, false)) CHECK(d == 1);

  DcrNet<float> full = DcrNet<float>::build(paper_config(4, Ablation::Full), 1);
  auto dec = dilations(full, false);
  CHECK(*std::max_element(dec.begin(), dec.end()) == 3);
}

TEST_CASE("layer enumeration matches the architecture") {
  DcrNet<float> net = DcrNet<float>::build(paper_config(4), 1);
  auto layers = net.enumerate_layers();
  int linear_rows = 0;
  for (const auto& l : layers) linear_rows += l.kind == LayerKind::Linear;
  CHECK(linear_rows == 2);

  // 9 encoder convs + 1 decoder head + 2 blocks * 9 convs.
  int conv_rows = 0;
  for (const auto& l : layers) conv_rows += l.kind == LayerKind::Conv;
  CHECK(conv_rows == 28);

  DcrNetConfig wide = paper_config(4);
  wide.rho = 4;
  DcrNet<float> net4 = DcrNet<float>::build(wide, 1);
  for (const auto& l : net4.enumerate_layers()) {
    if (l.name == "decoder.block1.b1c0.conv") CHECK(l.conv.out_channels == 32);
    if (l.name == "decoder.block1.b1c1.conv") CHECK(l.conv.groups == 32);
  }
  for (const auto& l : net.enumerate_layers()) {
    if (l.name == "decoder.block1.b1c0.conv") CHECK(l.conv.out_channels == 8);
  }
}

TEST_CASE("forward preserves shape and the codeword length for all variants") {
  Rng rng(5);
  for (Ablation ab : {Ablation::Full, Ablation::M1, Ablation::Baseline}) {
    for (int64_t den : {4, 16, 32}) {
      DcrNetConfig cfg = small_config();
      cfg.eta = EtaRatio{1, den};
      cfg.ablation = ab;
      DcrNet<float> net = DcrNet<float>::build(cfg, 9);
      Tensor<float> x = random_tensor<float>({3, 2, 8, 8}, rng);
      Tensor<float> v = net.encode_eval(x);
      CHECK(v.shape() == std::vector<int64_t>{3, cfg.codeword_len()});
      Tensor<float> y = net.decode_eval(v);
      CHECK(y.shape() == x.shape());
    }
  }
}

TEST_CASE("zero input produces a finite deterministic codeword") {
  DcrNet<float> net = DcrNet<float>::build(small_config(), 3);
  Tensor<float> zero({2, 2, 8, 8});
  Tensor<float> v1 = net.encode_eval(zero);
  Tensor<float> v2 = net.encode_eval(zero);
  CHECK(bit_equal(v1, v2));
  for (int64_t i = 0; i < v1.numel(); ++i) CHECK(std::isfinite(v1[i]));

  Tensor<float> code({1, net.config().codeword_len()});
  Tensor<float> y = net.decode_eval(code);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::isfinite(y[i]));
}

TEST_CASE("every input pixel reaches the codeword") {
  DcrNet<float> net = DcrNet<float>::build(small_config(), 7);
  Rng rng(19);
  Tensor<float> x = random_tensor<float>({1, 2, 8, 8}, rng);
  Tensor<float> base = net.encode_eval(x);
  for (int probe = 0; probe < 100; ++probe) {
    int64_t pixel = rng.uniform_int(0, x.numel() - 1);
    Tensor<float> bumped = x;
    bumped[pixel] += 0.37f;
    Tensor<float> v = net.encode_eval(bumped);
    bool changed = false;
    for (int64_t i = 0; i < v.numel(); ++i) changed = changed || v[i] != base[i];
    CHECK(changed);
  }
}

TEST_CASE("encode and decode reject mismatched shapes") {
  DcrNet<float> net = DcrNet<float>::build(small_config(), 1);
  Tensor<float> wrong({1, 2, 8, 9});
  CHECK_THROWS_AS(net.encode_eval(wrong), DimensionError);
  Tensor<float> code({1, net.config().codeword_len() + 1});
  CHECK_THROWS_AS(net.decode_eval(code), DimensionError);
}

TEST_CASE("zeroed blocks collapse to the identity map") {
  DcrNet<float> net = DcrNet<float>::build(small_config(), 21);
  auto zero_block_convs = [](auto& block) {
    for (auto& unit : block.dilated) unit.conv.weight.value.fill(0.0f);
    block.parallel.conv.weight.value.fill(0.0f);
    block.fuse.conv.weight.value.fill(0.0f);
  };
  zero_block_convs(net.enc_block);

  Rng rng(2);
  Tensor<float> x = random_tensor<float>({2, 2, 8, 8}, rng);
  Tape<float> tape;
  NodeId out = net.enc_block.forward(tape, tape.leaf(x), false);
  CHECK(bit_equal(tape.value(out), x));

  auto zero_decoder_block = [](DecoderBlock<float>& block) {
    for (auto& unit : block.branch1) unit.conv.weight.value.fill(0.0f);
    for (auto& unit : block.branch2) unit.conv.weight.value.fill(0.0f);
    block.fuse.conv.weight.value.fill(0.0f);
  };
  zero_decoder_block(net.dec_block1);
  Tape<float> tape2;
  NodeId out2 = net.dec_block1.forward(tape2, tape2.leaf(x), false);
  CHECK(bit_equal(tape2.value(out2), x));
}

TEST_CASE("dilated branch impulse support is exactly 13x13") {
  DcrNetConfig cfg;  // full 32x32 so the support fits without clipping
  DcrNet<float> net = DcrNet<float>::build(cfg, 1);
  for (auto& unit : net.enc_block.dilated) unit.conv.weight.value.fill(1.0f);

  Tensor<float> x({1, 2, 32, 32});
  x.at4(0, 0, 16, 16) = 1.0f;
  Tape<float> tape;
  NodeId out = net.enc_block.forward_dilated_branch(tape, tape.leaf(x), false);
  const Tensor<float>& y = tape.value(out);
  int64_t lit = 0;
  for (int64_t i = 0; i < 32; ++i) {
    for (int64_t j = 0; j < 32; ++j) {
      bool on = std::abs(y.at4(0, 0, i, j)) > 1e-7f || std::abs(y.at4(0, 1, i, j)) > 1e-7f;
      bool expect = std::abs(i - 16) <= 6 && std::abs(j - 16) <= 6;
      CHECK(on == expect);
      lit += on;
    }
  }
  CHECK(lit == 13 * 13);
}

TEST_CASE("receptive fields compose per branch") {
  DcrNet<float> net = DcrNet<float>::build(paper_config(4), 1);
  CHECK(net.receptive_field(ModelPart::Encoder, false) == std::pair<int64_t, int64_t>{13, 13});
  CHECK(net.receptive_field(ModelPart::Encoder, true) == std::pair<int64_t, int64_t>{17, 17});

  DcrNet<float> base = DcrNet<float>::build(paper_config(4, Ablation::Baseline), 1);
  CHECK(base.receptive_field(ModelPart::Encoder, false) == std::pair<int64_t, int64_t>{7, 7});

  // Decoder: per block max(branch1, branch2) = 13 at full dilation, composed
  // twice, plus the 5x5 head.
  CHECK(net.receptive_field(ModelPart::Decoder, false) == std::pair<int64_t, int64_t>{25, 25});
  CHECK(net.receptive_field(ModelPart::Decoder, true) == std::pair<int64_t, int64_t>{29, 29});
}

TEST_CASE("checkpoints round trip bit-exactly") {
  DcrNetConfig cfg = small_config();
  cfg.eta = EtaRatio{3, 16};
  cfg.ablation = Ablation::M1;
  DcrNet<float> net = DcrNet<float>::build(cfg, 11);
  // Make running stats non-trivial before saving.
  Rng rng(13);
  Tensor<float> x = random_tensor<float>({4, 2, 8, 8}, rng);
  Tape<float> tape;
  net.forward(tape, tape.leaf(x), true);

  net.save_checkpoint("model_test_ckpt.dcrm");
  DcrNet<float> loaded = DcrNet<float>::load_checkpoint("model_test_ckpt.dcrm");
  CHECK(loaded.config().eta.num == 3);
  CHECK(loaded.config().eta.den == 16);
  CHECK(loaded.config().ablation == Ablation::M1);

  auto a = net.state(), b = loaded.state();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(bit_equal(*a[i].second, *b[i].second));
  }
  Tensor<float> probe = random_tensor<float>({2, 2, 8, 8}, rng);
  CHECK(bit_equal(net.forward_eval(probe), loaded.forward_eval(probe)));
  std::remove("model_test_ckpt.dcrm");
}

TEST_CASE("corrupt checkpoints are rejected") {
  CHECK_THROWS_AS(DcrNet<float>::load_checkpoint("does_not_exist.dcrm"), DataError);
  FILE* f = std::fopen("model_test_bad.dcrm", "wb");
  std::fputs("JUNKJUNKJUNK", f);
  std::fclose(f);
  CHECK_THROWS_AS(DcrNet<float>::load_checkpoint("model_test_bad.dcrm"), DataError);
  std::remove("model_test_bad.dcrm");
}

TEST_CASE("full forward-backward matches finite differences on a 64-bit clone") {
  for (uint64_t seed : {1ull, 2ull}) {
    DcrNet<float> net32 = DcrNet<float>::build(small_config(), seed);
    DcrNet<double> net = net32.cast<double>();
    Rng rng(900 + seed);
    Tensor<double> x = random_tensor<double>({2, 2, 8, 8}, rng, 0.5);

    auto loss_with = [&](DcrNet<double>& m) {
      Tape<double> t;
      NodeId xi = t.leaf(x);
      NodeId target = t.leaf(x);
      NodeId y = m.forward(t, xi, true);
      return t.value(mse_loss(t, y, target))[0];
    };

    DcrNet<double> work = net;
    work.zero_grad();
    {
      Tape<double> t;
      NodeId xi = t.leaf(x);
      NodeId target = t.leaf(x);
      NodeId y = work.forward(t, xi, true);
      t.backward(mse_loss(t, y, target));
    }

    auto params = work.parameters();
    auto fresh = net.parameters();  // unperturbed copy for FD evaluations
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Parameter<double>* p = fresh[pi];
      const Tensor<double>& g = params[pi]->grad;
      double gmax = 0.0;
      for (int64_t i = 0; i < g.numel(); ++i) gmax = std::max(gmax, std::abs(g[i]));
      double floor = 1e-6 * std::max(1.0, gmax);
      // Spot-check a strided subset of each tensor; the acceptance suite
      // sweeps every element.
      int64_t stride = std::max<int64_t>(1, p->value.numel() / 25);
      for (int64_t i = 0; i < p->value.numel(); i += stride) {
        // Batch statistics curve the loss sharply in places; a small step
        // keeps truncation error below the tolerance.
        double fd = fd_slot(
            &p->value[i],
            [&]() {
              DcrNet<double> m = net;
              return loss_with(m);
            },
            1e-6);
        worst = std::max(worst, rel_err(fd, g[i], floor));
      }
    }
    CHECK(worst < 1e-3);
  }
}
