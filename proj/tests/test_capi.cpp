#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>

#include "dcrnet.h"

namespace {

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path(name) {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return path + "/" + name; }
};

}  // namespace

TEST_CASE("version and error text are always available") {
  CHECK(std::strlen(dcrnet_version()) > 0);
  CHECK(dcrnet_last_error() != nullptr);
}

TEST_CASE("config lifecycle and validation over the C boundary") {
  dcrnet_config* cfg = nullptr;
  REQUIRE(dcrnet_config_create(32, 32, 1, 4, 1, "full", &cfg) == DCRNET_OK);
  CHECK(dcrnet_config_na(cfg) == 32);
  CHECK(dcrnet_config_codeword_len(cfg) == 512);
  CHECK(std::string(dcrnet_config_ablation(cfg)) == "full");
  dcrnet_config_free(cfg);

  dcrnet_config* bad = nullptr;
  CHECK(dcrnet_config_create(32, 32, 3, 2, 1, "full", &bad) == DCRNET_ERR_CONFIG);
  CHECK(std::strlen(dcrnet_last_error()) > 0);
  CHECK(dcrnet_config_create(32, 32, 1, 4, 1, "bogus", &bad) == DCRNET_ERR_CONFIG);
  CHECK(dcrnet_config_create(32, 32, 1, 4, 1, "full", nullptr) == DCRNET_ERR_USAGE);
}

TEST_CASE("config files round trip through the C API") {
  TempDir dir("capi_cfg_dir");
  dcrnet_config* cfg = nullptr;
  REQUIRE(dcrnet_config_create(16, 16, 1, 8, 2, "m1", &cfg) == DCRNET_OK);
  REQUIRE(dcrnet_config_save(cfg, dir.file("m.cfg").c_str()) == DCRNET_OK);
  dcrnet_config* loaded = nullptr;
  REQUIRE(dcrnet_config_load(dir.file("m.cfg").c_str(), &loaded) == DCRNET_OK);
  CHECK(dcrnet_config_eta_den(loaded) == 8);
  CHECK(dcrnet_config_rho(loaded) == 2);
  CHECK(std::string(dcrnet_config_ablation(loaded)) == "m1");
  dcrnet_config_free(cfg);
  dcrnet_config_free(loaded);

  dcrnet_config* missing = nullptr;
  CHECK(dcrnet_config_load("no_such_file.cfg", &missing) == DCRNET_ERR_CONFIG);
}

TEST_CASE("end-to-end: generate, slice, train, save, load, evaluate") {
  TempDir dir("capi_e2e_dir");

  dcrnet_gen_params params;
  dcrnet_gen_params_default(&params);
  CHECK(params.clusters_min >= 1);
  params.nc = 64;

  dcrnet_dataset* data = nullptr;
  REQUIRE(dcrnet_dataset_generate(30, &params, 7, 8, 8, "train", &data) == DCRNET_OK);
  CHECK(dcrnet_dataset_count(data) == 30);

  REQUIRE(dcrnet_dataset_save(data, dir.file("d.dcrd").c_str()) == DCRNET_OK);
  dcrnet_dataset* reloaded = nullptr;
  REQUIRE(dcrnet_dataset_load(dir.file("d.dcrd").c_str(), &reloaded) == DCRNET_OK);
  CHECK(dcrnet_dataset_count(reloaded) == 30);

  dcrnet_dataset* train_part = nullptr;
  dcrnet_dataset* val_part = nullptr;
  REQUIRE(dcrnet_dataset_slice(data, 0, 24, &train_part) == DCRNET_OK);
  REQUIRE(dcrnet_dataset_slice(data, 24, 30, &val_part) == DCRNET_OK);
  CHECK(dcrnet_dataset_count(train_part) == 24);
  CHECK(dcrnet_dataset_count(val_part) == 6);
  CHECK(dcrnet_dataset_slice(data, 10, 5, &val_part) == DCRNET_ERR_USAGE);

  dcrnet_config* cfg = nullptr;
  REQUIRE(dcrnet_config_create(8, 8, 1, 4, 1, "full", &cfg) == DCRNET_OK);
  dcrnet_model* model = nullptr;
  REQUIRE(dcrnet_model_build(cfg, 3, &model) == DCRNET_OK);

  dcrnet_train_options opts;
  dcrnet_train_options_default(&opts);
  opts.epochs = 2;
  opts.batch_size = 12;
  opts.warmup_epochs = 1;

  struct Calls {
    int n = 0;
  } calls;
  auto cb = [](int64_t, double, double, double, double, void* user) {
    static_cast<Calls*>(user)->n += 1;
  };
  dcrnet_train_result result;
  REQUIRE(dcrnet_train(model, train_part, val_part, &opts, dir.file("run").c_str(), cb, &calls,
                       &result) == DCRNET_OK);
  CHECK(calls.n == 2);
  CHECK(result.best_epoch >= 0);
  CHECK(std::filesystem::exists(result.best_checkpoint));
  CHECK(std::filesystem::exists(result.metrics_csv));

  double direct = 0.0;
  REQUIRE(dcrnet_evaluate(model, val_part, &direct) == DCRNET_OK);

  dcrnet_model* loaded_model = nullptr;
  REQUIRE(dcrnet_model_load(result.last_checkpoint, &loaded_model) == DCRNET_OK);
  double reloaded_nmse = 0.0;
  REQUIRE(dcrnet_evaluate(loaded_model, val_part, &reloaded_nmse) == DCRNET_OK);
  CHECK(reloaded_nmse == direct);  // bit-identical round trip

  dcrnet_config* model_cfg = nullptr;
  REQUIRE(dcrnet_model_config(loaded_model, &model_cfg) == DCRNET_OK);
  CHECK(dcrnet_config_codeword_len(model_cfg) == 32);

  // Mismatched data dims surface as a usage error, not a crash.
  dcrnet_dataset* wrong = nullptr;
  REQUIRE(dcrnet_dataset_generate(4, &params, 9, 16, 16, "test", &wrong) == DCRNET_OK);
  double unused = 0.0;
  CHECK(dcrnet_evaluate(model, wrong, &unused) == DCRNET_ERR_USAGE);

  dcrnet_dataset_free(wrong);
  dcrnet_config_free(model_cfg);
  dcrnet_model_free(loaded_model);
  dcrnet_model_free(model);
  dcrnet_config_free(cfg);
  dcrnet_dataset_free(val_part);
  dcrnet_dataset_free(train_part);
  dcrnet_dataset_free(reloaded);
  dcrnet_dataset_free(data);
}

TEST_CASE("complexity endpoints") {
  dcrnet_config* cfg = nullptr;
  REQUIRE(dcrnet_config_create(32, 32, 1, 4, 1, "full", &cfg) == DCRNET_OK);

  uint64_t params = 0, flops = 0;
  REQUIRE(dcrnet_complexity_totals(cfg, 0, 1, &params, &flops) == DCRNET_OK);
  CHECK(params == 2101352);
  CHECK(flops == 4009984);

  char* table = nullptr;
  REQUIRE(dcrnet_complexity_table(cfg, 0, 1, &table) == DCRNET_OK);
  CHECK(std::strstr(table, "encoder.fc") != nullptr);
  CHECK(std::strstr(table, "totals:") != nullptr);
  dcrnet_string_free(table);

  int64_t rf_h = 0, rf_w = 0;
  REQUIRE(dcrnet_receptive_field(cfg, "encoder", 0, &rf_h, &rf_w) == DCRNET_OK);
  CHECK(rf_h == 13);
  CHECK(rf_w == 13);
  CHECK(dcrnet_receptive_field(cfg, "sideways", 0, &rf_h, &rf_w) == DCRNET_ERR_USAGE);

  int64_t rhos[3] = {1, 4, 10};
  char* sweep = nullptr;
  REQUIRE(dcrnet_sweep_table(cfg, rhos, 3, 0, 1, &sweep) == DCRNET_OK);
  CHECK(std::strstr(sweep, "rho flops params") != nullptr);
  dcrnet_string_free(sweep);

  TempDir dir("capi_csv_dir");
  REQUIRE(dcrnet_complexity_csv(cfg, 0, 1, dir.file("c.csv").c_str()) == DCRNET_OK);
  REQUIRE(dcrnet_sweep_csv(cfg, rhos, 3, 0, 1, dir.file("s.csv").c_str()) == DCRNET_OK);
  CHECK(std::filesystem::exists(dir.file("c.csv")));
  CHECK(std::filesystem::exists(dir.file("s.csv")));

  dcrnet_config_free(cfg);
}
