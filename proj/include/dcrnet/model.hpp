#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcrnet/autodiff.hpp"
#include "dcrnet/ops.hpp"
#include "dcrnet/rng.hpp"
#include "dcrnet/tensor.hpp"

namespace dcrnet {

/// Architecture variants: Full uses dilated convolutions everywhere they are
/// designed in; M1 keeps them only in the encoder; Baseline replaces every
/// dilated convolution with its standard (d=1) counterpart.
enum class Ablation { Full, M1, Baseline };

std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

/// Compression rate held as an exact rational so codeword lengths stay
/// integer-exact.
struct EtaRatio {
  int64_t num = 1;
  int64_t den = 4;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  static EtaRatio parse(const std::string& text);  // accepts "1/4" or "0.25"
};

struct DcrNetConfig {
  int64_t na = 32;
  int64_t nt = 32;
  EtaRatio eta{1, 4};
  int64_t rho = 1;
  Ablation ablation = Ablation::Full;
  /// Group count for the decoder's 1-D group convolutions; 0 selects
  /// depthwise (groups = channel width).
  int64_t decoder_groups = 0;

  int64_t codeword_len() const { return 2 * na * nt * eta.num / eta.den; }
  int64_t decoder_width() const { return 8 * rho; }
  void validate() const;

  /// key=value text file with keys na, nt, eta, rho, ablation [, groups].
  static DcrNetConfig load(const std::string& path);
  void save(const std::string& path) const;
};

enum class LayerKind { Conv, Linear, BatchNorm, PReLU };

std::string layer_kind_name(LayerKind k);

/// One row of the model's layer walk, in forward execution order.
struct LayerInfo {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ConvSpec conv;                              // kind == Conv
  int64_t in_features = 0, out_features = 0;  // kind == Linear
  int64_t channels = 0;                       // BatchNorm / PReLU (and conv out)
  int64_t out_h = 0, out_w = 0;               // spatial size of this layer's output
  int64_t rf_h = 0, rf_w = 0;                 // cumulative RF along this layer's branch; 0 = n/a
};

template <typename T>
struct Conv2d {
  std::string name;
  ConvSpec spec;
  Parameter<T> weight;

  Conv2d() = default;
  Conv2d(std::string layer_name, const ConvSpec& s);
  NodeId forward(Tape<T>& tape, NodeId x);
};

template <typename T>
struct BatchNorm2d {
  std::string name;
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() = default;
  BatchNorm2d(std::string layer_name, int64_t channels);
  NodeId forward(Tape<T>& tape, NodeId x, bool training);
  int64_t channels() const { return gamma.value.numel(); }
};

template <typename T>
struct PReLU {
  std::string name;
  Parameter<T> alpha;  // one learnable slope per layer

  PReLU() = default;
  explicit PReLU(std::string layer_name);
  NodeId forward(Tape<T>& tape, NodeId x);
};

template <typename T>
struct Linear {
  std::string name;
  Parameter<T> weight;  // [out, in]
  Parameter<T> bias;    // [out]

  Linear() = default;
  Linear(std::string layer_name, int64_t in_features, int64_t out_features);
  NodeId forward(Tape<T>& tape, NodeId x);
  int64_t in_features() const { return weight.value.dim(1); }
  int64_t out_features() const { return weight.value.dim(0); }
};

/// Convolution followed by batch normalization and PReLU.
template <typename T>
struct ConvUnit {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  PReLU<T> act;

  ConvUnit() = default;
  ConvUnit(const std::string& base_name, const ConvSpec& spec);
  NodeId forward(Tape<T>& tape, NodeId x, bool training);
};

/// Residual block: a three-rate dilated branch of asymmetric convolution
/// pairs next to a standard 3x3 branch, concatenated and fused by 1x1.
template <typename T>
struct EncoderBlock {
  std::vector<ConvUnit<T>> dilated;  // (1x3, 3x1) pairs at d = 1, 2, 3
  ConvUnit<T> parallel;              // standard 3x3
  ConvUnit<T> fuse;                  // 1x1, 4 -> 2

  NodeId forward(Tape<T>& tape, NodeId x, bool training);
  NodeId forward_dilated_branch(Tape<T>& tape, NodeId x, bool training);
};

/// Residual block with two width-expanding branches fused by 1x1.
template <typename T>
struct DecoderBlock {
  std::vector<ConvUnit<T>> branch1;  // 3x3 d2 (2->8rho), grouped 3x1/1x3 d3, 3x3 (8rho->2)
  std::vector<ConvUnit<T>> branch2;  // 1x3 (2->8rho), grouped 5x1/1x5, 3x1 (8rho->2)
  ConvUnit<T> fuse;                  // 1x1, 4 -> 2

  NodeId forward(Tape<T>& tape, NodeId x, bool training);
};

enum class ModelPart { Encoder, Decoder };

template <typename T>
class DcrNet {
 public:
  DcrNet() = default;

  /// Constructs and initializes the network: Kaiming fan-in weights with the
  /// PReLU slope's gain, alpha = 0.25, BN gamma = 1 / beta = 0. Deterministic
  /// for a fixed seed.
  static DcrNet build(const DcrNetConfig& config, uint64_t seed);

  const DcrNetConfig& config() const { return config_; }

  NodeId encode(Tape<T>& tape, NodeId x, bool training);
  NodeId decode(Tape<T>& tape, NodeId codeword, bool training);
  NodeId forward(Tape<T>& tape, NodeId x, bool training);

  // Evaluation-mode conveniences running a private tape.
  Tensor<T> encode_eval(const Tensor<T>& x);
  Tensor<T> decode_eval(const Tensor<T>& codeword);
  Tensor<T> forward_eval(const Tensor<T>& x);

  /// All trainable parameters in forward execution order. Names are unique.
  std::vector<Parameter<T>*> parameters();

  /// Parameters plus BN running statistics, in checkpoint order.
  std::vector<std::pair<std::string, Tensor<T>*>> state();

  void zero_grad();

  std::vector<LayerInfo> enumerate_layers() const;

  /// Analytic receptive field of one side of the autoencoder, composed per
  /// layer and maximized over parallel branches. Decoder RF is relative to
  /// its spatial input after the fully connected expansion.
  std::pair<int64_t, int64_t> receptive_field(ModelPart part, bool include_head = true) const;

  template <typename U>
  DcrNet<U> cast() const;

  void save_checkpoint(const std::string& path) const;
  static DcrNet load_checkpoint(const std::string& path);

  // Submodules are exposed for tests and structural probes.
  ConvUnit<T> enc_head;
  EncoderBlock<T> enc_block;
  Linear<T> enc_fc;
  Linear<T> dec_fc;
  ConvUnit<T> dec_head;
  DecoderBlock<T> dec_block1;
  DecoderBlock<T> dec_block2;

 private:
  template <typename U>
  friend class DcrNet;

  void check_input(const std::vector<int64_t>& shape) const;

  DcrNetConfig config_;
};

}  // namespace dcrnet
