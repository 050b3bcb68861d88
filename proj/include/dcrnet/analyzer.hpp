#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcrnet/model.hpp"

namespace dcrnet {

enum class FlopConvention { MacIsOne, MacIsTwo };

struct AnalyzerOptions {
  FlopConvention convention = FlopConvention::MacIsOne;
  /// Count batch-norm (scale + shift) and PReLU (compare + multiply) at two
  /// operations per element. On by default; the MAC-only subtotal is always
  /// reported alongside.
  bool include_bn_act = true;
};

struct ComplexityRow {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  uint64_t params = 0;
  uint64_t flops = 0;  // per sample, under the report's convention
  int64_t k_eff_h = 0, k_eff_w = 0;
  int64_t rf_h = 0, rf_w = 0;
};

struct ComplexityReport {
  std::vector<ComplexityRow> rows;
  uint64_t params_total = 0;         // everything
  uint64_t params_weights_only = 0;  // conv + FC only, BN/PReLU excluded
  uint64_t flops_total = 0;          // under `options`
  uint64_t flops_mac_only = 0;       // conv + FC MACs, BN/activation excluded
  AnalyzerOptions options;

  std::string convention_label() const;
};

/// Static walk of the layer enumeration; no forward pass involved.
ComplexityReport analyze(const DcrNetConfig& config, const AnalyzerOptions& options = {});

uint64_t count_params(const DcrNetConfig& config);
uint64_t count_flops(const DcrNetConfig& config, const AnalyzerOptions& options = {});

std::string complexity_table(const ComplexityReport& report);
void write_complexity_csv(const ComplexityReport& report, const std::string& path);

struct SweepRow {
  int64_t rho = 1;
  uint64_t flops = 0;
  uint64_t params = 0;
};

/// FLOPs/params as a function of the decoder width multiplier.
std::vector<SweepRow> sweep_rho(DcrNetConfig base, const std::vector<int64_t>& rhos,
                                const AnalyzerOptions& options = {});
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace dcrnet
