#include "dcrnet.h"

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "dcrnet/analyzer.hpp"
#include "dcrnet/errors.hpp"
#include "dcrnet/model.hpp"
#include "dcrnet/pipeline.hpp"
#include "dcrnet/threading.hpp"
#include "dcrnet/training.hpp"

struct dcrnet_config {
  dcrnet::DcrNetConfig cfg;
};

struct dcrnet_dataset {
  dcrnet::Dataset ds;
};

struct dcrnet_model {
  dcrnet::DcrNet<float> net;
};

namespace {

thread_local std::string g_last_error;

dcrnet_status status_from(const dcrnet::Error& e) {
  switch (e.kind()) {
    case dcrnet::ErrorKind::Usage:
      return DCRNET_ERR_USAGE;
    case dcrnet::ErrorKind::Config:
      return DCRNET_ERR_CONFIG;
    case dcrnet::ErrorKind::Data:
      return DCRNET_ERR_DATA;
    case dcrnet::ErrorKind::Numeric:
      return DCRNET_ERR_NUMERIC;
  }
  return DCRNET_ERR_INTERNAL;
}

template <typename Fn>
dcrnet_status guarded(Fn&& fn) {
  try {
    fn();
    return DCRNET_OK;
  } catch (const dcrnet::Error& e) {
    g_last_error = e.what();
    return status_from(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DCRNET_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DCRNET_ERR_INTERNAL;
  }
}

dcrnet_status fail_usage(const char* message) {
  g_last_error = message;
  return DCRNET_ERR_USAGE;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void copy_path(char (&dst)[1024], const std::string& src) {
  std::snprintf(dst, sizeof(dst), "%s", src.c_str());
}

dcrnet::AnalyzerOptions analyzer_options(int mac2, int include_bn_act) {
  dcrnet::AnalyzerOptions opts;
  opts.convention =
      mac2 ? dcrnet::FlopConvention::MacIsTwo : dcrnet::FlopConvention::MacIsOne;
  opts.include_bn_act = include_bn_act != 0;
  return opts;
}

}  // namespace

extern "C" {

const char* dcrnet_version(void) { return "0.1.0"; }

const char* dcrnet_last_error(void) { return g_last_error.c_str(); }

void dcrnet_set_threads(int n) { dcrnet::set_thread_count(n); }

void dcrnet_string_free(char* s) { delete[] s; }

dcrnet_status dcrnet_config_create(int64_t na, int64_t nt, int64_t eta_num, int64_t eta_den,
                                   int64_t rho, const char* ablation, dcrnet_config** out) {
  if (!out || !ablation) return fail_usage("config_create: null argument");
  return guarded([&] {
    dcrnet::DcrNetConfig cfg;
    cfg.na = na;
    cfg.nt = nt;
    cfg.eta = dcrnet::EtaRatio{eta_num, eta_den};
    cfg.rho = rho;
    cfg.ablation = dcrnet::ablation_from_name(ablation);
    cfg.validate();
    *out = new dcrnet_config{cfg};
  });
}

dcrnet_status dcrnet_config_load(const char* path, dcrnet_config** out) {
  if (!out || !path) return fail_usage("config_load: null argument");
  return guarded([&] { *out = new dcrnet_config{dcrnet::DcrNetConfig::load(path)}; });
}

dcrnet_status dcrnet_config_save(const dcrnet_config* cfg, const char* path) {
  if (!cfg || !path) return fail_usage("config_save: null argument");
  return guarded([&] { cfg->cfg.save(path); });
}

void dcrnet_config_free(dcrnet_config* cfg) { delete cfg; }

int64_t dcrnet_config_na(const dcrnet_config* cfg) { return cfg ? cfg->cfg.na : 0; }
int64_t dcrnet_config_nt(const dcrnet_config* cfg) { return cfg ? cfg->cfg.nt : 0; }
int64_t dcrnet_config_eta_num(const dcrnet_config* cfg) { return cfg ? cfg->cfg.eta.num : 0; }
int64_t dcrnet_config_eta_den(const dcrnet_config* cfg) { return cfg ? cfg->cfg.eta.den : 1; }
int64_t dcrnet_config_rho(const dcrnet_config* cfg) { return cfg ? cfg->cfg.rho : 0; }

const char* dcrnet_config_ablation(const dcrnet_config* cfg) {
  static thread_local std::string name;
  if (!cfg) return "";
  name = dcrnet::ablation_name(cfg->cfg.ablation);
  return name.c_str();
}

int64_t dcrnet_config_codeword_len(const dcrnet_config* cfg) {
  return cfg ? cfg->cfg.codeword_len() : 0;
}

void dcrnet_gen_params_default(dcrnet_gen_params* params) {
  if (!params) return;
  dcrnet::GeneratorParams defaults;
  params->clusters_min = defaults.clusters_min;
  params->clusters_max = defaults.clusters_max;
  params->delay_decay = defaults.delay_decay;
  params->angular_spread = defaults.angular_spread;
  params->nc = defaults.nc;
}

dcrnet_status dcrnet_dataset_generate(int64_t n_samples, const dcrnet_gen_params* params,
                                      uint64_t seed, int64_t na, int64_t nt, const char* split,
                                      dcrnet_dataset** out) {
  if (!out || !params || !split) return fail_usage("dataset_generate: null argument");
  return guarded([&] {
    dcrnet::GeneratorParams gp;
    gp.clusters_min = params->clusters_min;
    gp.clusters_max = params->clusters_max;
    gp.delay_decay = params->delay_decay;
    gp.angular_spread = params->angular_spread;
    gp.nc = params->nc;
    *out = new dcrnet_dataset{
        dcrnet::synth_generate(n_samples, gp, seed, na, nt, dcrnet::split_from_name(split))};
  });
}

dcrnet_status dcrnet_dataset_save(const dcrnet_dataset* ds, const char* path) {
  if (!ds || !path) return fail_usage("dataset_save: null argument");
  return guarded([&] { dcrnet::save_dataset(ds->ds, path); });
}

dcrnet_status dcrnet_dataset_load(const char* path, dcrnet_dataset** out) {
  if (!out || !path) return fail_usage("dataset_load: null argument");
  return guarded([&] { *out = new dcrnet_dataset{dcrnet::load_dataset(path)}; });
}

int64_t dcrnet_dataset_count(const dcrnet_dataset* ds) { return ds ? ds->ds.count() : 0; }

dcrnet_status dcrnet_dataset_slice(const dcrnet_dataset* ds, int64_t begin, int64_t end,
                                   dcrnet_dataset** out) {
  if (!ds || !out) return fail_usage("dataset_slice: null argument");
  return guarded([&] { *out = new dcrnet_dataset{dcrnet::dataset_slice(ds->ds, begin, end)}; });
}

void dcrnet_dataset_free(dcrnet_dataset* ds) { delete ds; }

dcrnet_status dcrnet_model_build(const dcrnet_config* cfg, uint64_t seed, dcrnet_model** out) {
  if (!out || !cfg) return fail_usage("model_build: null argument");
  return guarded([&] {
    *out = new dcrnet_model{dcrnet::DcrNet<float>::build(cfg->cfg, seed)};
  });
}

dcrnet_status dcrnet_model_save(const dcrnet_model* model, const char* path) {
  if (!model || !path) return fail_usage("model_save: null argument");
  return guarded([&] { model->net.save_checkpoint(path); });
}

dcrnet_status dcrnet_model_load(const char* path, dcrnet_model** out) {
  if (!out || !path) return fail_usage("model_load: null argument");
  return guarded([&] { *out = new dcrnet_model{dcrnet::DcrNet<float>::load_checkpoint(path)}; });
}

dcrnet_status dcrnet_model_config(const dcrnet_model* model, dcrnet_config** out) {
  if (!model || !out) return fail_usage("model_config: null argument");
  return guarded([&] { *out = new dcrnet_config{model->net.config()}; });
}

void dcrnet_model_free(dcrnet_model* model) { delete model; }

void dcrnet_train_options_default(dcrnet_train_options* options) {
  if (!options) return;
  dcrnet::TrainOptions defaults;
  options->epochs = defaults.epochs;
  options->batch_size = defaults.batch_size;
  options->seed = defaults.seed;
  options->gamma_min = defaults.schedule.gamma_min;
  options->gamma_max = defaults.schedule.gamma_max;
  options->warmup_epochs = defaults.schedule.warmup_epochs;
}

dcrnet_status dcrnet_train(dcrnet_model* model, const dcrnet_dataset* train_data,
                           const dcrnet_dataset* val_data, const dcrnet_train_options* options,
                           const char* out_dir, dcrnet_epoch_callback callback, void* user,
                           dcrnet_train_result* result) {
  if (!model || !train_data || !val_data || !options) {
    return fail_usage("train: null argument");
  }
  return guarded([&] {
    dcrnet::TrainOptions opts;
    opts.epochs = options->epochs;
    opts.batch_size = options->batch_size;
    opts.seed = options->seed;
    opts.schedule.gamma_min = options->gamma_min;
    opts.schedule.gamma_max = options->gamma_max;
    opts.schedule.warmup_epochs = options->warmup_epochs;
    opts.schedule.total_epochs = options->epochs;
    opts.out_dir = out_dir ? out_dir : "";
    if (callback) {
      opts.on_epoch = [callback, user](const dcrnet::EpochRecord& r) {
        callback(r.epoch, r.lr, r.train_loss, r.val_nmse_db, r.seconds, user);
      };
    }
    dcrnet::TrainReport report = dcrnet::train(model->net, train_data->ds, val_data->ds, opts);
    if (result) {
      result->best_epoch = report.best_epoch;
      result->best_val_nmse_db = report.best_val_nmse_db;
      result->final_train_nmse_db = report.final_train_nmse_db;
      copy_path(result->best_checkpoint, report.best_checkpoint);
      copy_path(result->last_checkpoint, report.last_checkpoint);
      copy_path(result->metrics_csv, report.metrics_csv);
    }
  });
}

dcrnet_status dcrnet_evaluate(dcrnet_model* model, const dcrnet_dataset* ds, double* nmse_db) {
  if (!model || !ds || !nmse_db) return fail_usage("evaluate: null argument");
  return guarded([&] { *nmse_db = dcrnet::evaluate_nmse(model->net, ds->ds).db; });
}

dcrnet_status dcrnet_complexity_totals(const dcrnet_config* cfg, int mac2, int include_bn_act,
                                       uint64_t* params, uint64_t* flops) {
  if (!cfg || !params || !flops) return fail_usage("complexity_totals: null argument");
  return guarded([&] {
    dcrnet::ComplexityReport report =
        dcrnet::analyze(cfg->cfg, analyzer_options(mac2, include_bn_act));
    *params = report.params_total;
    *flops = report.flops_total;
  });
}

dcrnet_status dcrnet_complexity_table(const dcrnet_config* cfg, int mac2, int include_bn_act,
                                      char** text_out) {
  if (!cfg || !text_out) return fail_usage("complexity_table: null argument");
  return guarded([&] {
    dcrnet::ComplexityReport report =
        dcrnet::analyze(cfg->cfg, analyzer_options(mac2, include_bn_act));
    *text_out = dup_string(dcrnet::complexity_table(report));
  });
}

dcrnet_status dcrnet_complexity_csv(const dcrnet_config* cfg, int mac2, int include_bn_act,
                                    const char* path) {
  if (!cfg || !path) return fail_usage("complexity_csv: null argument");
  return guarded([&] {
    dcrnet::ComplexityReport report =
        dcrnet::analyze(cfg->cfg, analyzer_options(mac2, include_bn_act));
    dcrnet::write_complexity_csv(report, path);
  });
}

dcrnet_status dcrnet_receptive_field(const dcrnet_config* cfg, const char* part,
                                     int include_head, int64_t* rf_h, int64_t* rf_w) {
  if (!cfg || !part || !rf_h || !rf_w) return fail_usage("receptive_field: null argument");
  return guarded([&] {
    std::string name(part);
    dcrnet::ModelPart p;
    if (name == "encoder") {
      p = dcrnet::ModelPart::Encoder;
    } else if (name == "decoder") {
      p = dcrnet::ModelPart::Decoder;
    } else {
      throw dcrnet::UsageError("receptive_field: part must be 'encoder' or 'decoder'");
    }
    dcrnet::DcrNet<float> net = dcrnet::DcrNet<float>::build(cfg->cfg, 0);
    auto [h, w] = net.receptive_field(p, include_head != 0);
    *rf_h = h;
    *rf_w = w;
  });
}

dcrnet_status dcrnet_sweep_csv(const dcrnet_config* cfg, const int64_t* rhos, int64_t n_rhos,
                               int mac2, int include_bn_act, const char* path) {
  if (!cfg || !rhos || n_rhos < 1 || !path) return fail_usage("sweep_csv: bad arguments");
  return guarded([&] {
    std::vector<int64_t> list(rhos, rhos + n_rhos);
    dcrnet::write_sweep_csv(
        dcrnet::sweep_rho(cfg->cfg, list, analyzer_options(mac2, include_bn_act)), path);
  });
}

dcrnet_status dcrnet_sweep_table(const dcrnet_config* cfg, const int64_t* rhos, int64_t n_rhos,
                                 int mac2, int include_bn_act, char** text_out) {
  if (!cfg || !rhos || n_rhos < 1 || !text_out) return fail_usage("sweep_table: bad arguments");
  return guarded([&] {
    std::vector<int64_t> list(rhos, rhos + n_rhos);
    auto rows = dcrnet::sweep_rho(cfg->cfg, list, analyzer_options(mac2, include_bn_act));
    std::string text = "rho flops params\n";
    for (const auto& row : rows) {
      text += std::to_string(row.rho) + " " + std::to_string(row.flops) + " " +
              std::to_string(row.params) + "\n";
    }
    *text_out = dup_string(text);
  });
}

}  // extern "C"
