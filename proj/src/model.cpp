#include "dcrnet/model.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dcrnet/errors.hpp"
#include "dcrnet/serialize.hpp"

namespace dcrnet {

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'C', 'R', 'M'};
constexpr uint32_t kCheckpointVersion = 1;
constexpr double kPreluInitSlope = 0.25;

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& text, const std::string& key) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has non-integer value '" + text + "'");
  }
}

}  // namespace

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full:
      return "full";
    case Ablation::M1:
      return "m1";
    case Ablation::Baseline:
      return "baseline";
  }
  return "full";
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "full") return Ablation::Full;
  if (name == "m1") return Ablation::M1;
  if (name == "baseline") return Ablation::Baseline;
  throw ConfigError("unknown ablation '" + name + "' (expected full|m1|baseline)");
}

std::string EtaRatio::str() const {
  return std::to_string(num) + "/" + std::to_string(den);
}

EtaRatio EtaRatio::parse(const std::string& text) {
  std::string t = trimmed(text);
  EtaRatio r;
  size_t slash = t.find('/');
  if (slash != std::string::npos) {
    r.num = parse_int(trimmed(t.substr(0, slash)), "eta");
    r.den = parse_int(trimmed(t.substr(slash + 1)), "eta");
  } else {
    char* end = nullptr;
    double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0') {
      throw ConfigError("eta value '" + text + "' is neither a ratio nor a number");
    }
    // Decimal rates are snapped to a denominator of 2^20 and reduced.
    int64_t den = int64_t(1) << 20;
    r.num = static_cast<int64_t>(std::llround(v * static_cast<double>(den)));
    r.den = den;
  }
  if (r.den <= 0 || r.num <= 0) {
    throw ConfigError("eta must be a positive ratio, got '" + text + "'");
  }
  int64_t a = r.num, b = r.den;
  while (b) {
    int64_t t2 = a % b;
    a = b;
    b = t2;
  }
  r.num /= a;
  r.den /= a;
  return r;
}

void DcrNetConfig::validate() const {
  if (na < 1 || nt < 1) throw ConfigError("na and nt must be positive");
  if (eta.num <= 0 || eta.den <= 0 || eta.num >= eta.den) {
    throw ConfigError("eta must lie in (0,1), got " + eta.str());
  }
  if (rho < 1) throw ConfigError("rho must be >= 1");
  if (codeword_len() < 1) {
    throw ConfigError("codeword length floor(2*na*nt*eta) = " + std::to_string(codeword_len()) +
                      " must be >= 1");
  }
  int64_t width = decoder_width();
  if (decoder_groups < 0 || (decoder_groups > 0 && width % decoder_groups != 0)) {
    throw ConfigError("decoder groups must divide the decoder width " + std::to_string(width));
  }
}

DcrNetConfig DcrNetConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  DcrNetConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trimmed(t.substr(0, eq));
    std::string val = trimmed(t.substr(eq + 1));
    if (key == "na") {
      cfg.na = parse_int(val, key);
    } else if (key == "nt") {
      cfg.nt = parse_int(val, key);
    } else if (key == "eta") {
      cfg.eta = EtaRatio::parse(val);
    } else if (key == "rho") {
      cfg.rho = parse_int(val, key);
    } else if (key == "ablation") {
      cfg.ablation = ablation_from_name(val);
    } else if (key == "groups") {
      cfg.decoder_groups = parse_int(val, key);
    } else {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

void DcrNetConfig::save(const std::string& path) const {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "na = " << na << "\n";
    os << "nt = " << nt << "\n";
    os << "eta = " << eta.str() << "\n";
    os << "rho = " << rho << "\n";
    os << "ablation = " << ablation_name(ablation) << "\n";
    if (decoder_groups != 0) os << "groups = " << decoder_groups << "\n";
  });
}

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv:
      return "conv";
    case LayerKind::Linear:
      return "linear";
    case LayerKind::BatchNorm:
      return "batchnorm";
    case LayerKind::PReLU:
      return "prelu";
  }
  return "conv";
}

// ---------------------------------------------------------------------------
// Modules
// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string layer_name, const ConvSpec& s) : name(std::move(layer_name)), spec(s) {
  spec.validate();
  weight = Parameter<T>(
      name + ".weight",
      Tensor<T>({spec.out_channels, spec.in_channels / spec.groups, spec.kh, spec.kw}));
}

template <typename T>
NodeId Conv2d<T>::forward(Tape<T>& tape, NodeId x) {
  NodeId w = tape.leaf(weight.value, &weight);
  return conv2d(tape, x, w, spec);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string layer_name, int64_t ch) : name(std::move(layer_name)) {
  gamma = Parameter<T>(name + ".gamma", Tensor<T>::ones({ch}));
  beta = Parameter<T>(name + ".beta", Tensor<T>::zeros({ch}));
  running_mean = Tensor<T>::zeros({ch});
  running_var = Tensor<T>::ones({ch});
}

template <typename T>
NodeId BatchNorm2d<T>::forward(Tape<T>& tape, NodeId x, bool training) {
  NodeId g = tape.leaf(gamma.value, &gamma);
  NodeId b = tape.leaf(beta.value, &beta);
  return batchnorm2d(tape, x, g, b, running_mean, running_var, momentum, eps, training);
}

template <typename T>
PReLU<T>::PReLU(std::string layer_name) : name(std::move(layer_name)) {
  alpha = Parameter<T>(name + ".alpha", Tensor<T>::full({1}, T(kPreluInitSlope)));
}

template <typename T>
NodeId PReLU<T>::forward(Tape<T>& tape, NodeId x) {
  NodeId a = tape.leaf(alpha.value, &alpha);
  return prelu(tape, x, a);
}

template <typename T>
Linear<T>::Linear(std::string layer_name, int64_t in_features, int64_t out_features)
    : name(std::move(layer_name)) {
  weight = Parameter<T>(name + ".weight", Tensor<T>({out_features, in_features}));
  bias = Parameter<T>(name + ".bias", Tensor<T>::zeros({out_features}));
}

template <typename T>
NodeId Linear<T>::forward(Tape<T>& tape, NodeId x) {
  NodeId w = tape.leaf(weight.value, &weight);
  NodeId b = tape.leaf(bias.value, &bias);
  return linear(tape, x, w, b);
}

template <typename T>
ConvUnit<T>::ConvUnit(const std::string& base_name, const ConvSpec& spec)
    : conv(base_name + ".conv", spec),
      bn(base_name + ".bn", spec.out_channels),
      act(base_name + ".act") {}

template <typename T>
NodeId ConvUnit<T>::forward(Tape<T>& tape, NodeId x, bool training) {
  NodeId y = conv.forward(tape, x);
  y = bn.forward(tape, y, training);
  return act.forward(tape, y);
}

template <typename T>
NodeId EncoderBlock<T>::forward(Tape<T>& tape, NodeId x, bool training) {
  NodeId d = forward_dilated_branch(tape, x, training);
  NodeId p = parallel.forward(tape, x, training);
  NodeId merged = concat_channels(tape, d, p);
  NodeId fused = fuse.forward(tape, merged, training);
  return add(tape, fused, x);
}

template <typename T>
NodeId EncoderBlock<T>::forward_dilated_branch(Tape<T>& tape, NodeId x, bool training) {
  NodeId y = x;
  for (auto& unit : dilated) y = unit.forward(tape, y, training);
  return y;
}

template <typename T>
NodeId DecoderBlock<T>::forward(Tape<T>& tape, NodeId x, bool training) {
  NodeId b1 = x;
  for (auto& unit : branch1) b1 = unit.forward(tape, b1, training);
  NodeId b2 = x;
  for (auto& unit : branch2) b2 = unit.forward(tape, b2, training);
  NodeId merged = concat_channels(tape, b1, b2);
  NodeId fused = fuse.forward(tape, merged, training);
  return add(tape, fused, x);
}

// ---------------------------------------------------------------------------
// DcrNet
// ---------------------------------------------------------------------------

template <typename T>
DcrNet<T> DcrNet<T>::build(const DcrNetConfig& config, uint64_t seed) {
  config.validate();
  DcrNet<T> net;
  net.config_ = config;

  bool enc_dilated = config.ablation != Ablation::Baseline;
  bool dec_dilated = config.ablation == Ablation::Full;
  int64_t width = config.decoder_width();
  int64_t groups = config.decoder_groups == 0 ? width : config.decoder_groups;
  int64_t flat = 2 * config.na * config.nt;

  net.enc_head = ConvUnit<T>("encoder.head", ConvSpec::same_padded(2, 2, 5, 5));

  net.enc_block.dilated.clear();
  for (int64_t d = 1; d <= 3; ++d) {
    int64_t dd = enc_dilated ? d : 1;
    std::string base = "encoder.block.dil" + std::to_string(d);
    net.enc_block.dilated.emplace_back(base + "a", ConvSpec::same_padded(2, 2, 1, 3, dd, dd));
    net.enc_block.dilated.emplace_back(base + "b", ConvSpec::same_padded(2, 2, 3, 1, dd, dd));
  }
  net.enc_block.parallel = ConvUnit<T>("encoder.block.par", ConvSpec::same_padded(2, 2, 3, 3));
  net.enc_block.fuse = ConvUnit<T>("encoder.block.fuse", ConvSpec::same_padded(4, 2, 1, 1));

  net.enc_fc = Linear<T>("encoder.fc", flat, config.codeword_len());
  net.dec_fc = Linear<T>("decoder.fc", config.codeword_len(), flat);

  net.dec_head = ConvUnit<T>("decoder.head", ConvSpec::same_padded(2, 2, 5, 5));

  auto make_decoder_block = [&](const std::string& base) {
    DecoderBlock<T> block;
    int64_t d2 = dec_dilated ? 2 : 1;
    int64_t d3 = dec_dilated ? 3 : 1;
    block.branch1.emplace_back(base + ".b1c0", ConvSpec::same_padded(2, width, 3, 3, d2, d2));
    block.branch1.emplace_back(base + ".b1c1",
                               ConvSpec::same_padded(width, width, 3, 1, d3, d3, groups));
    block.branch1.emplace_back(base + ".b1c2",
                               ConvSpec::same_padded(width, width, 1, 3, d3, d3, groups));
    block.branch1.emplace_back(base + ".b1c3", ConvSpec::same_padded(width, 2, 3, 3));
    block.branch2.emplace_back(base + ".b2c0", ConvSpec::same_padded(2, width, 1, 3));
    block.branch2.emplace_back(base + ".b2c1",
                               ConvSpec::same_padded(width, width, 5, 1, 1, 1, groups));
    block.branch2.emplace_back(base + ".b2c2",
                               ConvSpec::same_padded(width, width, 1, 5, 1, 1, groups));
    block.branch2.emplace_back(base + ".b2c3", ConvSpec::same_padded(width, 2, 3, 1));
    block.fuse = ConvUnit<T>(base + ".fuse", ConvSpec::same_padded(4, 2, 1, 1));
    return block;
  };
  net.dec_block1 = make_decoder_block("decoder.block1");
  net.dec_block2 = make_decoder_block("decoder.block2");

  // Kaiming fan-in initialization with the PReLU gain, walked in parameter
  // order so a fixed seed reproduces the exact weights.
  Rng rng(mix_seed(seed, 0));
  double gain = std::sqrt(2.0 / (1.0 + kPreluInitSlope * kPreluInitSlope));
  for (Parameter<T>* p : net.parameters()) {
    const std::string& n = p->name;
    bool is_weight = n.size() > 7 && n.compare(n.size() - 7, 7, ".weight") == 0;
    if (!is_weight) continue;  // biases, BN affine and alpha keep their defaults
    int64_t fan_in;
    if (p->value.rank() == 4) {
      fan_in = p->value.dim(1) * p->value.dim(2) * p->value.dim(3);
    } else {
      fan_in = p->value.dim(1);
    }
    double std_dev = gain / std::sqrt(static_cast<double>(fan_in));
    T* data = p->value.data();
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      data[i] = static_cast<T>(rng.normal() * std_dev);
    }
  }
  return net;
}

template <typename T>
void DcrNet<T>::check_input(const std::vector<int64_t>& shape) const {
  if (shape.size() != 4 || shape[1] != 2 || shape[2] != config_.na || shape[3] != config_.nt) {
    throw DimensionError("expected input [N,2," + std::to_string(config_.na) + "," +
                         std::to_string(config_.nt) + "], got (" +
                         Tensor<T>::shape_string(shape) + ")");
  }
}

template <typename T>
NodeId DcrNet<T>::encode(Tape<T>& tape, NodeId x, bool training) {
  check_input(tape.value(x).shape());
  int64_t n = tape.value(x).dim(0);
  NodeId y = enc_head.forward(tape, x, training);
  y = enc_block.forward(tape, y, training);
  y = reshape(tape, y, {n, 2 * config_.na * config_.nt});
  return enc_fc.forward(tape, y);
}

template <typename T>
NodeId DcrNet<T>::decode(Tape<T>& tape, NodeId codeword, bool training) {
  const auto& shape = tape.value(codeword).shape();
  if (shape.size() != 2 || shape[1] != config_.codeword_len()) {
    throw DimensionError("expected codeword [N," + std::to_string(config_.codeword_len()) +
                         "], got (" + Tensor<T>::shape_string(shape) + ")");
  }
  int64_t n = shape[0];
  NodeId y = dec_fc.forward(tape, codeword);
  y = reshape(tape, y, {n, 2, config_.na, config_.nt});
  y = dec_head.forward(tape, y, training);
  y = dec_block1.forward(tape, y, training);
  return dec_block2.forward(tape, y, training);
}

template <typename T>
NodeId DcrNet<T>::forward(Tape<T>& tape, NodeId x, bool training) {
  return decode(tape, encode(tape, x, training), training);
}

template <typename T>
Tensor<T> DcrNet<T>::encode_eval(const Tensor<T>& x) {
  Tape<T> tape;
  NodeId out = encode(tape, tape.leaf(x), false);
  return tape.value(out);
}

template <typename T>
Tensor<T> DcrNet<T>::decode_eval(const Tensor<T>& codeword) {
  Tape<T> tape;
  NodeId out = decode(tape, tape.leaf(codeword), false);
  return tape.value(out);
}

template <typename T>
Tensor<T> DcrNet<T>::forward_eval(const Tensor<T>& x) {
  Tape<T> tape;
  NodeId out = forward(tape, tape.leaf(x), false);
  return tape.value(out);
}

template <typename T>
std::vector<Parameter<T>*> DcrNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto unit = [&](ConvUnit<T>& u) {
    out.push_back(&u.conv.weight);
    out.push_back(&u.bn.gamma);
    out.push_back(&u.bn.beta);
    out.push_back(&u.act.alpha);
  };
  unit(enc_head);
  for (auto& u : enc_block.dilated) unit(u);
  unit(enc_block.parallel);
  unit(enc_block.fuse);
  out.push_back(&enc_fc.weight);
  out.push_back(&enc_fc.bias);
  out.push_back(&dec_fc.weight);
  out.push_back(&dec_fc.bias);
  unit(dec_head);
  for (auto* block : {&dec_block1, &dec_block2}) {
    for (auto& u : block->branch1) unit(u);
    for (auto& u : block->branch2) unit(u);
    unit(block->fuse);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> DcrNet<T>::state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto unit = [&](ConvUnit<T>& u) {
    out.emplace_back(u.conv.weight.name, &u.conv.weight.value);
    out.emplace_back(u.bn.gamma.name, &u.bn.gamma.value);
    out.emplace_back(u.bn.beta.name, &u.bn.beta.value);
    out.emplace_back(u.bn.name + ".running_mean", &u.bn.running_mean);
    out.emplace_back(u.bn.name + ".running_var", &u.bn.running_var);
    out.emplace_back(u.act.alpha.name, &u.act.alpha.value);
  };
  unit(enc_head);
  for (auto& u : enc_block.dilated) unit(u);
  unit(enc_block.parallel);
  unit(enc_block.fuse);
  out.emplace_back(enc_fc.weight.name, &enc_fc.weight.value);
  out.emplace_back(enc_fc.bias.name, &enc_fc.bias.value);
  out.emplace_back(dec_fc.weight.name, &dec_fc.weight.value);
  out.emplace_back(dec_fc.bias.name, &dec_fc.bias.value);
  unit(dec_head);
  for (auto* block : {&dec_block1, &dec_block2}) {
    for (auto& u : block->branch1) unit(u);
    for (auto& u : block->branch2) unit(u);
    unit(block->fuse);
  }
  return out;
}

template <typename T>
void DcrNet<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
std::vector<LayerInfo> DcrNet<T>::enumerate_layers() const {
  std::vector<LayerInfo> rows;
  int64_t h = config_.na, w = config_.nt;

  struct Rf {
    int64_t h = 1, w = 1;
  };

  auto push_unit = [&](const ConvUnit<T>& u, Rf& rf) {
    const ConvSpec& s = u.conv.spec;
    rf.h += s.effective_kh() - 1;
    rf.w += s.effective_kw() - 1;
    LayerInfo conv_row;
    conv_row.name = u.conv.name;
    conv_row.kind = LayerKind::Conv;
    conv_row.conv = s;
    conv_row.channels = s.out_channels;
    conv_row.out_h = s.out_h(h);
    conv_row.out_w = s.out_w(w);
    conv_row.rf_h = rf.h;
    conv_row.rf_w = rf.w;
    rows.push_back(conv_row);

    LayerInfo bn_row;
    bn_row.name = u.bn.name;
    bn_row.kind = LayerKind::BatchNorm;
    bn_row.channels = s.out_channels;
    bn_row.out_h = conv_row.out_h;
    bn_row.out_w = conv_row.out_w;
    bn_row.rf_h = rf.h;
    bn_row.rf_w = rf.w;
    rows.push_back(bn_row);

    LayerInfo act_row = bn_row;
    act_row.name = u.act.name;
    act_row.kind = LayerKind::PReLU;
    rows.push_back(act_row);
  };

  auto push_linear = [&](const Linear<T>& fc) {
    LayerInfo row;
    row.name = fc.name;
    row.kind = LayerKind::Linear;
    row.in_features = fc.in_features();
    row.out_features = fc.out_features();
    row.rf_h = 0;
    row.rf_w = 0;
    rows.push_back(row);
  };

  // Encoder.
  Rf rf;
  push_unit(enc_head, rf);
  Rf rf_dil = rf;
  for (const auto& u : enc_block.dilated) push_unit(u, rf_dil);
  Rf rf_par = rf;
  push_unit(enc_block.parallel, rf_par);
  Rf merged{std::max(rf_dil.h, rf_par.h), std::max(rf_dil.w, rf_par.w)};
  push_unit(enc_block.fuse, merged);
  push_linear(enc_fc);

  // Decoder; RF restarts at the spatial map recovered from the codeword.
  push_linear(dec_fc);
  Rf drf;
  push_unit(dec_head, drf);
  for (const DecoderBlock<T>* block : {&dec_block1, &dec_block2}) {
    Rf b1 = drf;
    for (const auto& u : block->branch1) push_unit(u, b1);
    Rf b2 = drf;
    for (const auto& u : block->branch2) push_unit(u, b2);
    Rf m{std::max(b1.h, b2.h), std::max(b1.w, b2.w)};
    push_unit(block->fuse, m);
    drf = m;
  }
  return rows;
}

template <typename T>
std::pair<int64_t, int64_t> DcrNet<T>::receptive_field(ModelPart part, bool include_head) const {
  int64_t rh = 1, rw = 1;
  auto compose = [&](const ConvSpec& s) {
    rh += s.effective_kh() - 1;
    rw += s.effective_kw() - 1;
  };

  if (part == ModelPart::Encoder) {
    if (include_head) compose(enc_head.conv.spec);
    int64_t h0 = rh, w0 = rw;
    int64_t dh = h0, dw = w0;
    for (const auto& u : enc_block.dilated) {
      dh += u.conv.spec.effective_kh() - 1;
      dw += u.conv.spec.effective_kw() - 1;
    }
    int64_t ph = h0 + enc_block.parallel.conv.spec.effective_kh() - 1;
    int64_t pw = w0 + enc_block.parallel.conv.spec.effective_kw() - 1;
    rh = std::max(dh, ph);
    rw = std::max(dw, pw);
    compose(enc_block.fuse.conv.spec);
    return {rh, rw};
  }

  if (include_head) compose(dec_head.conv.spec);
  for (const DecoderBlock<T>* block : {&dec_block1, &dec_block2}) {
    int64_t h0 = rh, w0 = rw;
    int64_t b1h = h0, b1w = w0, b2h = h0, b2w = w0;
    for (const auto& u : block->branch1) {
      b1h += u.conv.spec.effective_kh() - 1;
      b1w += u.conv.spec.effective_kw() - 1;
    }
    for (const auto& u : block->branch2) {
      b2h += u.conv.spec.effective_kh() - 1;
      b2w += u.conv.spec.effective_kw() - 1;
    }
    rh = std::max(b1h, b2h);
    rw = std::max(b1w, b2w);
    compose(block->fuse.conv.spec);
  }
  return {rh, rw};
}

template <typename T>
template <typename U>
DcrNet<U> DcrNet<T>::cast() const {
  DcrNet<U> out;
  out.config_ = config_;
  auto cast_unit = [](const ConvUnit<T>& src) {
    ConvUnit<U> dst;
    dst.conv.name = src.conv.name;
    dst.conv.spec = src.conv.spec;
    dst.conv.weight = src.conv.weight.template cast<U>();
    dst.bn.name = src.bn.name;
    dst.bn.gamma = src.bn.gamma.template cast<U>();
    dst.bn.beta = src.bn.beta.template cast<U>();
    dst.bn.running_mean = src.bn.running_mean.template cast<U>();
    dst.bn.running_var = src.bn.running_var.template cast<U>();
    dst.bn.momentum = static_cast<U>(src.bn.momentum);
    dst.bn.eps = static_cast<U>(src.bn.eps);
    dst.act.name = src.act.name;
    dst.act.alpha = src.act.alpha.template cast<U>();
    return dst;
  };
  auto cast_linear = [](const Linear<T>& src) {
    Linear<U> dst;
    dst.name = src.name;
    dst.weight = src.weight.template cast<U>();
    dst.bias = src.bias.template cast<U>();
    return dst;
  };
  out.enc_head = cast_unit(enc_head);
  for (const auto& u : enc_block.dilated) out.enc_block.dilated.push_back(cast_unit(u));
  out.enc_block.parallel = cast_unit(enc_block.parallel);
  out.enc_block.fuse = cast_unit(enc_block.fuse);
  out.enc_fc = cast_linear(enc_fc);
  out.dec_fc = cast_linear(dec_fc);
  out.dec_head = cast_unit(dec_head);
  auto cast_block = [&](const DecoderBlock<T>& src) {
    DecoderBlock<U> dst;
    for (const auto& u : src.branch1) dst.branch1.push_back(cast_unit(u));
    for (const auto& u : src.branch2) dst.branch2.push_back(cast_unit(u));
    dst.fuse = cast_unit(src.fuse);
    return dst;
  };
  out.dec_block1 = cast_block(dec_block1);
  out.dec_block2 = cast_block(dec_block2);
  return out;
}

template <typename T>
void DcrNet<T>::save_checkpoint(const std::string& path) const {
  auto entries = const_cast<DcrNet<T>*>(this)->state();
  atomic_write_file(path, [&](std::ostream& os) {
    os.write(kCheckpointMagic, 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<uint32_t>(config_.na));
    write_u32(os, static_cast<uint32_t>(config_.nt));
    write_u64(os, static_cast<uint64_t>(config_.eta.num));
    write_u64(os, static_cast<uint64_t>(config_.eta.den));
    write_u32(os, static_cast<uint32_t>(config_.rho));
    write_u32(os, static_cast<uint32_t>(config_.ablation));
    write_u32(os, static_cast<uint32_t>(config_.decoder_groups));
    write_u64(os, static_cast<uint64_t>(entries.size()));
    for (const auto& [name, tensor] : entries) {
      write_string(os, name);
      write_tensor(os, *tensor);
    }
  });
}

template <typename T>
DcrNet<T> DcrNet<T>::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError(path + " is not a model checkpoint");
  }
  uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  DcrNetConfig cfg;
  cfg.na = read_u32(is);
  cfg.nt = read_u32(is);
  cfg.eta.num = static_cast<int64_t>(read_u64(is));
  cfg.eta.den = static_cast<int64_t>(read_u64(is));
  cfg.rho = read_u32(is);
  uint32_t ab = read_u32(is);
  if (ab > 2) throw DataError("checkpoint ablation tag out of range");
  cfg.ablation = static_cast<Ablation>(ab);
  cfg.decoder_groups = read_u32(is);
  cfg.validate();

  DcrNet<T> net = DcrNet<T>::build(cfg, 0);
  auto entries = net.state();
  uint64_t count = read_u64(is);
  if (count != entries.size()) {
    throw DataError("checkpoint has " + std::to_string(count) + " records, model expects " +
                    std::to_string(entries.size()));
  }
  for (auto& [name, tensor] : entries) {
    std::string stored = read_string(is);
    if (stored != name) {
      throw DataError("checkpoint record '" + stored + "' does not match expected '" + name +
                      "'");
    }
    Tensor<T> value = read_tensor<T>(is);
    if (!value.same_shape(*tensor)) {
      throw DataError("checkpoint tensor '" + name + "' has shape (" +
                      Tensor<T>::shape_string(value.shape()) + "), expected (" +
                      Tensor<T>::shape_string(tensor->shape()) + ")");
    }
    *tensor = std::move(value);
  }
  return net;
}

#define DCRNET_INSTANTIATE_MODEL(T)                 \
  template struct Conv2d<T>;                        \
  template struct BatchNorm2d<T>;                   \
  template struct PReLU<T>;                         \
  template struct Linear<T>;                        \
  template struct ConvUnit<T>;                      \
  template struct EncoderBlock<T>;                  \
  template struct DecoderBlock<T>;                  \
  template class DcrNet<T>;

DCRNET_INSTANTIATE_MODEL(float)
DCRNET_INSTANTIATE_MODEL(double)

template DcrNet<double> DcrNet<float>::cast<double>() const;
template DcrNet<float> DcrNet<double>::cast<float>() const;
template DcrNet<float> DcrNet<float>::cast<float>() const;

#undef DCRNET_INSTANTIATE_MODEL

}  // namespace dcrnet
