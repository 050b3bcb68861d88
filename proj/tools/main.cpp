// dcrnet command-line front end. Links the C API only; all numeric work
// happens behind the shared library boundary.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcrnet.h"

using nlohmann::json;

namespace {

int exit_code(dcrnet_status s) {
  switch (s) {
    case DCRNET_OK:
      return 0;
    case DCRNET_ERR_USAGE:
      return 1;
    case DCRNET_ERR_CONFIG:
      return 2;
    case DCRNET_ERR_DATA:
      return 3;
    case DCRNET_ERR_NUMERIC:
    case DCRNET_ERR_INTERNAL:
      return 4;
  }
  return 4;
}

int fail(dcrnet_status s, const std::string& doing) {
  std::cerr << "dcrnet: " << doing << ": " << dcrnet_last_error() << "\n";
  return exit_code(s);
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (ptr) Free(ptr);
  }
  T** out() { return &ptr; }
  operator T*() const { return ptr; }
};

using ConfigHandle = Handle<dcrnet_config, dcrnet_config_free>;
using DatasetHandle = Handle<dcrnet_dataset, dcrnet_dataset_free>;
using ModelHandle = Handle<dcrnet_model, dcrnet_model_free>;

void write_text_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os << content;
    if (!os) throw std::runtime_error("cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

/// Every run records what it did and how to repeat it bit-identically.
class Manifest {
 public:
  Manifest(std::string command, std::string path)
      : path_(std::move(path)), start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["tool_version"] = dcrnet_version();
    doc_["options"] = json::object();
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
  }

  template <typename T>
  void option(const std::string& key, const T& value) {
    doc_["options"][key] = value;
  }
  void input(const std::string& path) { doc_["inputs"].push_back(path); }
  void output(const std::string& path) { doc_["outputs"].push_back(path); }

  void write() {
    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_);
    doc_["wall_time_seconds"] = elapsed.count();
    write_text_atomic(path_, doc_.dump(2) + "\n");
  }

 private:
  std::string path_;
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

bool parse_cluster_range(const std::string& text, int64_t& lo, int64_t& hi) {
  size_t pos = text.find("..");
  try {
    if (pos == std::string::npos) {
      lo = hi = std::stoll(text);
    } else {
      lo = std::stoll(text.substr(0, pos));
      hi = std::stoll(text.substr(pos + 2));
    }
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

std::vector<int64_t> parse_int_list(const std::string& text) {
  std::vector<int64_t> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

// ---------------------------------------------------------------------------
// generate-data
// ---------------------------------------------------------------------------

struct GenerateArgs {
  int64_t samples = 5000;
  uint64_t seed = 1;
  std::string out;
  std::string clusters = "2..5";
  double decay = 0.0;           // 0 = library default
  double angular_spread = 0.0;  // 0 = library default
  std::string split = "train";
  int64_t na = 32, nt = 32, nc = 1024;
  std::string manifest;
};

int run_generate(const GenerateArgs& args) {
  dcrnet_gen_params params;
  dcrnet_gen_params_default(&params);
  if (!parse_cluster_range(args.clusters, params.clusters_min, params.clusters_max)) {
    std::cerr << "dcrnet: --clusters expects 'a..b' or a single count\n";
    return 1;
  }
  if (args.decay > 0.0) params.delay_decay = args.decay;
  if (args.angular_spread > 0.0) params.angular_spread = args.angular_spread;
  params.nc = args.nc;

  std::string manifest_path = args.manifest.empty() ? args.out + ".manifest.json" : args.manifest;
  Manifest manifest("generate-data", manifest_path);
  manifest.option("samples", args.samples);
  manifest.option("seed", args.seed);
  manifest.option("out", args.out);
  manifest.option("clusters_min", params.clusters_min);
  manifest.option("clusters_max", params.clusters_max);
  manifest.option("decay", params.delay_decay);
  manifest.option("angular_spread", params.angular_spread);
  manifest.option("split", args.split);
  manifest.option("na", args.na);
  manifest.option("nt", args.nt);
  manifest.option("nc", params.nc);
  manifest.output(args.out);

  DatasetHandle ds;
  dcrnet_status s = dcrnet_dataset_generate(args.samples, &params, args.seed, args.na, args.nt,
                                            args.split.c_str(), ds.out());
  if (s != DCRNET_OK) return fail(s, "generating data");
  s = dcrnet_dataset_save(ds, args.out.c_str());
  if (s != DCRNET_OK) return fail(s, "saving dataset");
  manifest.write();
  std::cout << "generated " << args.samples << " " << args.split << " samples -> " << args.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string val;
  std::string out;
  int64_t epochs = 200;
  int64_t batch = 200;
  uint64_t seed = 1;
  double gamma_min = 5e-5;
  double gamma_max = 2e-3;
  int64_t warmup = 10;
  bool quiet = false;
};

int run_train(const TrainArgs& args) {
  ConfigHandle cfg;
  dcrnet_status s = dcrnet_config_load(args.config.c_str(), cfg.out());
  if (s != DCRNET_OK) return fail(s, "loading config " + args.config);

  DatasetHandle full;
  s = dcrnet_dataset_load(args.data.c_str(), full.out());
  if (s != DCRNET_OK) return fail(s, "loading dataset " + args.data);

  DatasetHandle train_ds, val_ds;
  const dcrnet_dataset* train_ptr = full;
  if (!args.val.empty()) {
    s = dcrnet_dataset_load(args.val.c_str(), val_ds.out());
    if (s != DCRNET_OK) return fail(s, "loading validation dataset " + args.val);
  } else {
    // No validation file: hold out the trailing tenth of the training data.
    int64_t n = dcrnet_dataset_count(full);
    int64_t holdout = n >= 10 ? n / 10 : 1;
    if (holdout >= n) {
      std::cerr << "dcrnet: dataset too small to split a validation set\n";
      return 3;
    }
    s = dcrnet_dataset_slice(full, 0, n - holdout, train_ds.out());
    if (s != DCRNET_OK) return fail(s, "splitting train subset");
    s = dcrnet_dataset_slice(full, n - holdout, n, val_ds.out());
    if (s != DCRNET_OK) return fail(s, "splitting validation subset");
    train_ptr = train_ds;
  }

  ModelHandle model;
  s = dcrnet_model_build(cfg, args.seed, model.out());
  if (s != DCRNET_OK) return fail(s, "building model");

  dcrnet_train_options opts;
  dcrnet_train_options_default(&opts);
  opts.epochs = args.epochs;
  opts.batch_size = args.batch;
  opts.seed = args.seed;
  opts.gamma_min = args.gamma_min;
  opts.gamma_max = args.gamma_max;
  opts.warmup_epochs = args.warmup;

  std::filesystem::create_directories(args.out);
  Manifest manifest("train", args.out + "/manifest.json");
  manifest.option("config", args.config);
  manifest.option("data", args.data);
  manifest.option("val", args.val);
  manifest.option("epochs", args.epochs);
  manifest.option("batch", args.batch);
  manifest.option("seed", args.seed);
  manifest.option("gamma_min", args.gamma_min);
  manifest.option("gamma_max", args.gamma_max);
  manifest.option("warmup", args.warmup);
  manifest.option("out", args.out);
  manifest.input(args.config);
  manifest.input(args.data);
  if (!args.val.empty()) manifest.input(args.val);

  struct Progress {
    int64_t total;
    bool quiet;
  } progress{args.epochs, args.quiet};
  auto callback = [](int64_t epoch, double lr, double loss, double val_db, double seconds,
                     void* user) {
    auto* p = static_cast<Progress*>(user);
    if (p->quiet) return;
    std::printf("epoch %4lld/%lld  lr %.6g  loss %.6g  val %.3f dB  (%.2fs)\n",
                static_cast<long long>(epoch + 1), static_cast<long long>(p->total), lr, loss,
                val_db, seconds);
    std::fflush(stdout);
  };

  dcrnet_train_result result;
  s = dcrnet_train(model, train_ptr, val_ds, &opts, args.out.c_str(), callback, &progress,
                   &result);
  if (s != DCRNET_OK) return fail(s, "training");

  json report;
  report["best_epoch"] = result.best_epoch;
  report["best_val_nmse_db"] = result.best_val_nmse_db;
  report["final_train_nmse_db"] = result.final_train_nmse_db;
  report["best_checkpoint"] = result.best_checkpoint;
  report["last_checkpoint"] = result.last_checkpoint;
  report["metrics_csv"] = result.metrics_csv;
  // Values the schedule and optimizer assume but the config does not pin.
  report["assumptions"] = {{"adam_beta1", 0.9},
                           {"adam_beta2", 0.999},
                           {"adam_eps", 1e-8},
                           {"batch_size", args.batch},
                           {"warmup", "linear"},
                           {"best_model_rule", "min val NMSE"}};
  write_text_atomic(args.out + "/train_report.json", report.dump(2) + "\n");

  manifest.output(result.best_checkpoint);
  manifest.output(result.last_checkpoint);
  manifest.output(result.metrics_csv);
  manifest.output(args.out + "/train_report.json");
  manifest.write();

  std::printf("best epoch %lld, val NMSE %.4f dB, final train NMSE %.4f dB\n",
              static_cast<long long>(result.best_epoch), result.best_val_nmse_db,
              result.final_train_nmse_db);
  std::printf("checkpoints and metrics in %s\n", args.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string json_out;
};

int run_eval(const EvalArgs& args) {
  ModelHandle model;
  dcrnet_status s = dcrnet_model_load(args.checkpoint.c_str(), model.out());
  if (s != DCRNET_OK) return fail(s, "loading checkpoint " + args.checkpoint);

  DatasetHandle ds;
  s = dcrnet_dataset_load(args.data.c_str(), ds.out());
  if (s != DCRNET_OK) return fail(s, "loading dataset " + args.data);

  double nmse_db = 0.0;
  s = dcrnet_evaluate(model, ds, &nmse_db);
  if (s != DCRNET_OK) return fail(s, "evaluating");

  ConfigHandle cfg;
  s = dcrnet_model_config(model, cfg.out());
  if (s != DCRNET_OK) return fail(s, "reading model config");
  uint64_t params = 0, flops = 0;
  s = dcrnet_complexity_totals(cfg, 0, 1, &params, &flops);
  if (s != DCRNET_OK) return fail(s, "computing complexity");

  std::string json_path = args.json_out.empty() ? args.checkpoint + ".eval.json" : args.json_out;
  Manifest manifest("eval", json_path + ".manifest.json");
  manifest.option("checkpoint", args.checkpoint);
  manifest.option("data", args.data);
  manifest.option("json", json_path);
  manifest.input(args.checkpoint);
  manifest.input(args.data);
  manifest.output(json_path);

  json doc;
  doc["nmse_db"] = nmse_db;
  doc["eta"] = static_cast<double>(dcrnet_config_eta_num(cfg)) /
               static_cast<double>(dcrnet_config_eta_den(cfg));
  doc["eta_ratio"] = std::to_string(dcrnet_config_eta_num(cfg)) + "/" +
                     std::to_string(dcrnet_config_eta_den(cfg));
  doc["rho"] = dcrnet_config_rho(cfg);
  doc["params"] = params;
  doc["flops"] = flops;
  write_text_atomic(json_path, doc.dump(2) + "\n");
  manifest.write();

  std::printf("NMSE: %.6f dB\n", nmse_db);
  std::printf("report -> %s\n", json_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// analyze / sweep
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string config;
  std::string convention = "mac1";
  bool no_bn_act = false;
  std::string csv;
};

int run_analyze(const AnalyzeArgs& args) {
  ConfigHandle cfg;
  dcrnet_status s = dcrnet_config_load(args.config.c_str(), cfg.out());
  if (s != DCRNET_OK) return fail(s, "loading config " + args.config);

  int mac2 = args.convention == "mac2";
  int include = args.no_bn_act ? 0 : 1;

  char* table = nullptr;
  s = dcrnet_complexity_table(cfg, mac2, include, &table);
  if (s != DCRNET_OK) return fail(s, "analyzing");
  std::fputs(table, stdout);
  dcrnet_string_free(table);

  // Both counting conventions, so the choice is auditable.
  uint64_t params = 0, f_mac1 = 0, f_mac2 = 0;
  dcrnet_complexity_totals(cfg, 0, include, &params, &f_mac1);
  dcrnet_complexity_totals(cfg, 1, include, &params, &f_mac2);
  std::printf("conventions: mac1 %llu flops, mac2 %llu flops (bn/act %s)\n",
              static_cast<unsigned long long>(f_mac1), static_cast<unsigned long long>(f_mac2),
              include ? "included" : "excluded");

  std::string manifest_path =
      args.csv.empty() ? "dcrnet-analyze.manifest.json" : args.csv + ".manifest.json";
  Manifest manifest("analyze", manifest_path);
  manifest.option("config", args.config);
  manifest.option("convention", args.convention);
  manifest.option("bn_act", include != 0);
  manifest.input(args.config);
  if (!args.csv.empty()) {
    s = dcrnet_complexity_csv(cfg, mac2, include, args.csv.c_str());
    if (s != DCRNET_OK) return fail(s, "writing csv");
    manifest.option("csv", args.csv);
    manifest.output(args.csv);
  }
  manifest.write();
  return 0;
}

struct SweepArgs {
  std::string config;
  std::string rhos = "1,4,8,10,12";
  std::string convention = "mac1";
  bool no_bn_act = false;
  std::string csv;
};

int run_sweep(const SweepArgs& args) {
  ConfigHandle cfg;
  dcrnet_status s = dcrnet_config_load(args.config.c_str(), cfg.out());
  if (s != DCRNET_OK) return fail(s, "loading config " + args.config);

  std::vector<int64_t> rhos = parse_int_list(args.rhos);
  if (rhos.empty()) {
    std::cerr << "dcrnet: --rho expects a comma-separated list\n";
    return 1;
  }
  int mac2 = args.convention == "mac2";
  int include = args.no_bn_act ? 0 : 1;

  char* table = nullptr;
  s = dcrnet_sweep_table(cfg, rhos.data(), static_cast<int64_t>(rhos.size()), mac2, include,
                         &table);
  if (s != DCRNET_OK) return fail(s, "sweeping");
  std::fputs(table, stdout);
  dcrnet_string_free(table);

  std::string manifest_path =
      args.csv.empty() ? "dcrnet-sweep.manifest.json" : args.csv + ".manifest.json";
  Manifest manifest("sweep", manifest_path);
  manifest.option("config", args.config);
  manifest.option("rho", args.rhos);
  manifest.option("convention", args.convention);
  manifest.option("bn_act", include != 0);
  manifest.input(args.config);
  if (!args.csv.empty()) {
    s = dcrnet_sweep_csv(cfg, rhos.data(), static_cast<int64_t>(rhos.size()), mac2, include,
                         args.csv.c_str());
    if (s != DCRNET_OK) return fail(s, "writing csv");
    manifest.option("csv", args.csv);
    manifest.output(args.csv);
  }
  manifest.write();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcrnet: dilated-convolution CSI feedback autoencoder"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("generate-data", "synthesize a CSI dataset");
  cmd_gen->add_option("--samples", gen.samples, "sample count")->required();
  cmd_gen->add_option("--seed", gen.seed, "generator seed");
  cmd_gen->add_option("--out", gen.out, "output dataset path")->required();
  cmd_gen->add_option("--clusters", gen.clusters, "cluster count range a..b");
  cmd_gen->add_option("--decay", gen.decay, "delay tap decay constant");
  cmd_gen->add_option("--angular-spread", gen.angular_spread, "angular footprint width in bins");
  cmd_gen->add_option("--split", gen.split, "split tag: train|val|test");
  cmd_gen->add_option("--na", gen.na, "retained delay rows");
  cmd_gen->add_option("--nt", gen.nt, "antenna count");
  cmd_gen->add_option("--nc", gen.nc, "subcarrier count");
  cmd_gen->add_option("--manifest", gen.manifest, "manifest path override");

  TrainArgs tr;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->add_option("--config", tr.config, "model config file")->required();
  cmd_train->add_option("--data", tr.data, "training dataset")->required();
  cmd_train->add_option("--val", tr.val, "validation dataset (default: trailing 10% of --data)");
  cmd_train->add_option("--epochs", tr.epochs, "epoch count");
  cmd_train->add_option("--batch", tr.batch, "batch size");
  cmd_train->add_option("--seed", tr.seed, "init and shuffle seed");
  cmd_train->add_option("--out", tr.out, "output directory")->required();
  cmd_train->add_option("--gamma-min", tr.gamma_min, "minimum learning rate");
  cmd_train->add_option("--gamma-max", tr.gamma_max, "maximum learning rate");
  cmd_train->add_option("--warmup", tr.warmup, "warm-up epochs");
  cmd_train->add_flag("--quiet", tr.quiet, "suppress per-epoch progress");

  EvalArgs ev;
  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  cmd_eval->add_option("--data", ev.data, "dataset to evaluate")->required();
  cmd_eval->add_option("--json", ev.json_out, "report path (default <checkpoint>.eval.json)");

  AnalyzeArgs an;
  CLI::App* cmd_analyze = app.add_subcommand("analyze", "parameter/FLOPs/RF accounting");
  cmd_analyze->add_option("--config", an.config, "model config file")->required();
  cmd_analyze->add_option("--convention", an.convention, "mac1|mac2")
      ->check(CLI::IsMember({"mac1", "mac2"}));
  cmd_analyze->add_flag("--no-bn-act", an.no_bn_act, "exclude BN/activation element costs");
  cmd_analyze->add_option("--csv", an.csv, "per-layer CSV output path");

  SweepArgs sw;
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "FLOPs across width multipliers");
  cmd_sweep->add_option("--config", sw.config, "model config file")->required();
  cmd_sweep->add_option("--rho", sw.rhos, "comma-separated width multipliers");
  cmd_sweep->add_option("--convention", sw.convention, "mac1|mac2")
      ->check(CLI::IsMember({"mac1", "mac2"}));
  cmd_sweep->add_flag("--no-bn-act", sw.no_bn_act, "exclude BN/activation element costs");
  cmd_sweep->add_option("--csv", sw.csv, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (cmd_gen->parsed()) return run_generate(gen);
    if (cmd_train->parsed()) return run_train(tr);
    if (cmd_eval->parsed()) return run_eval(ev);
    if (cmd_analyze->parsed()) return run_analyze(an);
    if (cmd_sweep->parsed()) return run_sweep(sw);
  } catch (const std::exception& e) {
    std::cerr << "dcrnet: " << e.what() << "\n";
    return 4;
  }
  return 1;
}
