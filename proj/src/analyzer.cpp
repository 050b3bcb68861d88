#include "dcrnet/analyzer.hpp"

#include <cstdio>
#include <sstream>

#include "dcrnet/serialize.hpp"

namespace dcrnet {

namespace {

uint64_t conv_params(const ConvSpec& s) {
  return static_cast<uint64_t>(s.out_channels * (s.in_channels / s.groups) * s.kh * s.kw);
}

}  // namespace

std::string ComplexityReport::convention_label() const {
  std::string label = options.convention == FlopConvention::MacIsOne ? "mac1" : "mac2";
  if (options.include_bn_act) label += "+bn-act";
  return label;
}

ComplexityReport analyze(const DcrNetConfig& config, const AnalyzerOptions& options) {
  config.validate();
  DcrNet<float> model = DcrNet<float>::build(config, 0);
  uint64_t mac_factor = options.convention == FlopConvention::MacIsTwo ? 2 : 1;

  ComplexityReport report;
  report.options = options;
  for (const LayerInfo& layer : model.enumerate_layers()) {
    ComplexityRow row;
    row.name = layer.name;
    row.kind = layer.kind;
    row.rf_h = layer.rf_h;
    row.rf_w = layer.rf_w;
    switch (layer.kind) {
      case LayerKind::Conv: {
        uint64_t p = conv_params(layer.conv);
        uint64_t macs = p * static_cast<uint64_t>(layer.out_h * layer.out_w);
        row.params = p;
        row.flops = macs * mac_factor;
        row.k_eff_h = layer.conv.effective_kh();
        row.k_eff_w = layer.conv.effective_kw();
        report.params_weights_only += p;
        report.flops_mac_only += macs;
        break;
      }
      case LayerKind::Linear: {
        uint64_t p = static_cast<uint64_t>(layer.out_features * layer.in_features +
                                           layer.out_features);
        uint64_t macs = static_cast<uint64_t>(layer.out_features * layer.in_features);
        row.params = p;
        row.flops = macs * mac_factor;
        report.params_weights_only += p;
        report.flops_mac_only += macs;
        break;
      }
      case LayerKind::BatchNorm: {
        row.params = static_cast<uint64_t>(2 * layer.channels);
        uint64_t numel = static_cast<uint64_t>(layer.channels * layer.out_h * layer.out_w);
        row.flops = options.include_bn_act ? 2 * numel : 0;
        break;
      }
      case LayerKind::PReLU: {
        row.params = 1;
        uint64_t numel = static_cast<uint64_t>(layer.channels * layer.out_h * layer.out_w);
        row.flops = options.include_bn_act ? 2 * numel : 0;
        break;
      }
    }
    report.params_total += row.params;
    report.flops_total += row.flops;
    report.rows.push_back(row);
  }
  return report;
}

uint64_t count_params(const DcrNetConfig& config) { return analyze(config).params_total; }

uint64_t count_flops(const DcrNetConfig& config, const AnalyzerOptions& options) {
  return analyze(config, options).flops_total;
}

std::string complexity_table(const ComplexityReport& report) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-28s %-10s %12s %14s %8s %8s\n", "layer", "kind", "params",
                "flops", "k_eff", "rf");
  os << buf;
  for (const ComplexityRow& row : report.rows) {
    std::string keff = row.kind == LayerKind::Conv
                           ? std::to_string(row.k_eff_h) + "x" + std::to_string(row.k_eff_w)
                           : "-";
    std::string rf = row.rf_h > 0 ? std::to_string(row.rf_h) + "x" + std::to_string(row.rf_w)
                                  : "-";
    std::snprintf(buf, sizeof(buf), "%-28s %-10s %12llu %14llu %8s %8s\n", row.name.c_str(),
                  layer_kind_name(row.kind).c_str(),
                  static_cast<unsigned long long>(row.params),
                  static_cast<unsigned long long>(row.flops), keff.c_str(), rf.c_str());
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "totals: params %llu (weights only %llu), flops[%s] %llu, flops[mac-only] %llu\n",
                static_cast<unsigned long long>(report.params_total),
                static_cast<unsigned long long>(report.params_weights_only),
                report.convention_label().c_str(),
                static_cast<unsigned long long>(report.flops_total),
                static_cast<unsigned long long>(report.flops_mac_only));
  os << buf;
  return os.str();
}

void write_complexity_csv(const ComplexityReport& report, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "layer,kind,params,flops,k_eff_h,k_eff_w,rf_h,rf_w\n";
    for (const ComplexityRow& row : report.rows) {
      os << row.name << ',' << layer_kind_name(row.kind) << ',' << row.params << ',' << row.flops
         << ',' << row.k_eff_h << ',' << row.k_eff_w << ',' << row.rf_h << ',' << row.rf_w
         << '\n';
    }
  });
}

std::vector<SweepRow> sweep_rho(DcrNetConfig base, const std::vector<int64_t>& rhos,
                                const AnalyzerOptions& options) {
  std::vector<SweepRow> rows;
  for (int64_t rho : rhos) {
    base.rho = rho;
    ComplexityReport report = analyze(base, options);
    rows.push_back(SweepRow{rho, report.flops_total, report.params_total});
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "rho,flops,params\n";
    for (const SweepRow& row : rows) {
      os << row.rho << ',' << row.flops << ',' << row.params << '\n';
    }
  });
}

}  // namespace dcrnet
