/* C interface to the dcrnet library: opaque handles and status codes over
 * the C++ core. Every function returning dcrnet_status leaves a readable
 * message in dcrnet_last_error() on failure. */

#ifndef DCRNET_H
#define DCRNET_H

#include <stdint.h>

#if defined(_WIN32)
#define DCRNET_API __declspec(dllexport)
#else
#define DCRNET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dcrnet_status {
  DCRNET_OK = 0,
  DCRNET_ERR_USAGE = 1,
  DCRNET_ERR_CONFIG = 2,
  DCRNET_ERR_DATA = 3,
  DCRNET_ERR_NUMERIC = 4,
  DCRNET_ERR_INTERNAL = 5
} dcrnet_status;

typedef struct dcrnet_config dcrnet_config;
typedef struct dcrnet_dataset dcrnet_dataset;
typedef struct dcrnet_model dcrnet_model;

DCRNET_API const char* dcrnet_version(void);

/* Message describing the most recent failure on this thread. */
DCRNET_API const char* dcrnet_last_error(void);

/* Caps worker threads. Overrides the DCRNET_THREADS environment variable
 * (default 1). */
DCRNET_API void dcrnet_set_threads(int n);

DCRNET_API void dcrnet_string_free(char* s);

/* ----------------------------------------------------------------------- */
/* Model configuration                                                      */
/* ----------------------------------------------------------------------- */

/* ablation is one of "full", "m1", "baseline". */
DCRNET_API dcrnet_status dcrnet_config_create(int64_t na, int64_t nt, int64_t eta_num,
                                              int64_t eta_den, int64_t rho,
                                              const char* ablation, dcrnet_config** out);

/* Loads a key=value text file with keys na, nt, eta, rho, ablation. */
DCRNET_API dcrnet_status dcrnet_config_load(const char* path, dcrnet_config** out);
DCRNET_API dcrnet_status dcrnet_config_save(const dcrnet_config* cfg, const char* path);
DCRNET_API void dcrnet_config_free(dcrnet_config* cfg);

DCRNET_API int64_t dcrnet_config_na(const dcrnet_config* cfg);
DCRNET_API int64_t dcrnet_config_nt(const dcrnet_config* cfg);
DCRNET_API int64_t dcrnet_config_eta_num(const dcrnet_config* cfg);
DCRNET_API int64_t dcrnet_config_eta_den(const dcrnet_config* cfg);
DCRNET_API int64_t dcrnet_config_rho(const dcrnet_config* cfg);
DCRNET_API const char* dcrnet_config_ablation(const dcrnet_config* cfg);
DCRNET_API int64_t dcrnet_config_codeword_len(const dcrnet_config* cfg);

/* ----------------------------------------------------------------------- */
/* Datasets                                                                 */
/* ----------------------------------------------------------------------- */

typedef struct dcrnet_gen_params {
  int64_t clusters_min;
  int64_t clusters_max;
  double delay_decay;
  double angular_spread;
  int64_t nc;
} dcrnet_gen_params;

DCRNET_API void dcrnet_gen_params_default(dcrnet_gen_params* params);

/* split is one of "train", "val", "test". */
DCRNET_API dcrnet_status dcrnet_dataset_generate(int64_t n_samples,
                                                 const dcrnet_gen_params* params, uint64_t seed,
                                                 int64_t na, int64_t nt, const char* split,
                                                 dcrnet_dataset** out);
DCRNET_API dcrnet_status dcrnet_dataset_save(const dcrnet_dataset* ds, const char* path);
DCRNET_API dcrnet_status dcrnet_dataset_load(const char* path, dcrnet_dataset** out);
DCRNET_API int64_t dcrnet_dataset_count(const dcrnet_dataset* ds);

/* Copies the sample range [begin, end) into a new dataset that keeps the
 * source's normalization metadata. */
DCRNET_API dcrnet_status dcrnet_dataset_slice(const dcrnet_dataset* ds, int64_t begin,
                                              int64_t end, dcrnet_dataset** out);
DCRNET_API void dcrnet_dataset_free(dcrnet_dataset* ds);

/* ----------------------------------------------------------------------- */
/* Models                                                                   */
/* ----------------------------------------------------------------------- */

DCRNET_API dcrnet_status dcrnet_model_build(const dcrnet_config* cfg, uint64_t seed,
                                            dcrnet_model** out);
DCRNET_API dcrnet_status dcrnet_model_save(const dcrnet_model* model, const char* path);
DCRNET_API dcrnet_status dcrnet_model_load(const char* path, dcrnet_model** out);

/* Copy of the model's configuration; free with dcrnet_config_free. */
DCRNET_API dcrnet_status dcrnet_model_config(const dcrnet_model* model, dcrnet_config** out);
DCRNET_API void dcrnet_model_free(dcrnet_model* model);

/* ----------------------------------------------------------------------- */
/* Training and evaluation                                                  */
/* ----------------------------------------------------------------------- */

typedef struct dcrnet_train_options {
  int64_t epochs;
  int64_t batch_size;
  uint64_t seed;
  double gamma_min;
  double gamma_max;
  int64_t warmup_epochs;
} dcrnet_train_options;

DCRNET_API void dcrnet_train_options_default(dcrnet_train_options* options);

typedef void (*dcrnet_epoch_callback)(int64_t epoch, double lr, double train_loss,
                                      double val_nmse_db, double seconds, void* user);

typedef struct dcrnet_train_result {
  int64_t best_epoch;
  double best_val_nmse_db;
  double final_train_nmse_db;
  char best_checkpoint[1024];
  char last_checkpoint[1024];
  char metrics_csv[1024];
} dcrnet_train_result;

/* Trains in place. out_dir receives best/last checkpoints and metrics.csv;
 * it is created if missing. callback may be NULL. */
DCRNET_API dcrnet_status dcrnet_train(dcrnet_model* model, const dcrnet_dataset* train_data,
                                      const dcrnet_dataset* val_data,
                                      const dcrnet_train_options* options, const char* out_dir,
                                      dcrnet_epoch_callback callback, void* user,
                                      dcrnet_train_result* result);

/* NMSE in dB on denormalized tensors (evaluation mode). */
DCRNET_API dcrnet_status dcrnet_evaluate(dcrnet_model* model, const dcrnet_dataset* ds,
                                         double* nmse_db);

/* ----------------------------------------------------------------------- */
/* Complexity accounting                                                    */
/* ----------------------------------------------------------------------- */

/* mac2 != 0 counts a multiply-accumulate as two operations. include_bn_act
 * != 0 adds batch-norm and activation element costs (the default report). */
DCRNET_API dcrnet_status dcrnet_complexity_totals(const dcrnet_config* cfg, int mac2,
                                                  int include_bn_act, uint64_t* params,
                                                  uint64_t* flops);

/* Human-readable per-layer table; free with dcrnet_string_free. */
DCRNET_API dcrnet_status dcrnet_complexity_table(const dcrnet_config* cfg, int mac2,
                                                 int include_bn_act, char** text_out);

DCRNET_API dcrnet_status dcrnet_complexity_csv(const dcrnet_config* cfg, int mac2,
                                               int include_bn_act, const char* path);

/* part is "encoder" or "decoder". */
DCRNET_API dcrnet_status dcrnet_receptive_field(const dcrnet_config* cfg, const char* part,
                                                int include_head, int64_t* rf_h, int64_t* rf_w);

DCRNET_API dcrnet_status dcrnet_sweep_csv(const dcrnet_config* cfg, const int64_t* rhos,
                                          int64_t n_rhos, int mac2, int include_bn_act,
                                          const char* path);

/* Sweep as text lines "rho flops params"; free with dcrnet_string_free. */
DCRNET_API dcrnet_status dcrnet_sweep_table(const dcrnet_config* cfg, const int64_t* rhos,
                                            int64_t n_rhos, int mac2, int include_bn_act,
                                            char** text_out);

#ifdef __cplusplus
}
#endif

#endif /* DCRNET_H */
