#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcrnet/model.hpp"
#include "dcrnet/pipeline.hpp"

namespace dcrnet {

struct LrSchedule {
  double gamma_min = 5e-5;
  double gamma_max = 2e-3;
  int64_t warmup_epochs = 10;
  int64_t total_epochs = 200;

  void validate() const;
};

/// Learning rate at epoch t: linear ramp gamma_min -> gamma_max across the
/// warm-up, then half-cosine annealing that reaches gamma_min at t = total.
double cosine_lr(int64_t t, const LrSchedule& s);

/// Adam with bias correction. Moment buffers are keyed by parameter identity
/// and must be stepped with gradients already populated.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(double lr);
  int64_t step_count() const { return steps_; }

  static constexpr double kDefaultBeta1 = 0.9;
  static constexpr double kDefaultBeta2 = 0.999;
  static constexpr double kDefaultEps = 1e-8;

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  double beta1_, beta2_, eps_;
  int64_t steps_ = 0;
};

/// Reported instead of -infinity when the reconstruction is exact.
inline constexpr double kNmseFloorDb = -120.0;

struct NmseResult {
  double db = 0.0;
  int64_t skipped = 0;  // samples with zero reference energy
};

/// Mean of per-sample error-to-signal ratios, reported in dB.
struct NmseAccumulator {
  double ratio_sum = 0.0;
  int64_t used = 0;
  int64_t skipped = 0;

  /// num = ||x - x_hat||^2, den = ||x||^2 for one sample. Zero-energy
  /// references are counted but excluded from the mean.
  void add_ratio(double num, double den) {
    if (den == 0.0) {
      ++skipped;
      return;
    }
    ratio_sum += num / den;
    ++used;
  }

  double db() const {
    double mean = ratio_sum / static_cast<double>(used);
    if (!(mean > 0.0)) return kNmseFloorDb;
    return std::max(10.0 * std::log10(mean), kNmseFloorDb);
  }
};

/// Mean per-sample error ratio on denormalized tensors, in dB. Runs the
/// model in evaluation mode; results are independent of the batch split.
NmseResult evaluate_nmse(DcrNet<float>& model, const Dataset& ds, int64_t batch_size = 200);

struct EpochRecord {
  int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_nmse_db = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> records;
  int64_t best_epoch = -1;
  double best_val_nmse_db = 0.0;
  double final_train_nmse_db = 0.0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string metrics_csv;
};

struct TrainOptions {
  int64_t epochs = 200;
  int64_t batch_size = 200;
  uint64_t seed = 1;
  LrSchedule schedule;
  /// When set, best/last checkpoints and metrics.csv are written here.
  std::string out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Seeded-shuffle minibatch training with MSE loss, Adam and the cosine
/// schedule. Deterministic for a fixed seed and a single worker thread.
TrainReport train(DcrNet<float>& model, const Dataset& train_data, const Dataset& val_data,
                  const TrainOptions& options);

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& records);

}  // namespace dcrnet
