#include "dcrnet/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "dcrnet/errors.hpp"
#include "dcrnet/serialize.hpp"

namespace dcrnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Copies selected samples into a batch tensor [B, 2, na, nt].
Tensor<float> gather_batch(const Dataset& ds, const std::vector<int64_t>& order, int64_t begin,
                           int64_t end) {
  int64_t plane = 2 * ds.na() * ds.nt();
  Tensor<float> batch = Tensor<float>::uninitialized({end - begin, 2, ds.na(), ds.nt()});
  for (int64_t i = begin; i < end; ++i) {
    std::memcpy(batch.data() + (i - begin) * plane, ds.samples.data() + order[i] * plane,
                sizeof(float) * static_cast<size_t>(plane));
  }
  return batch;
}

}  // namespace

void LrSchedule::validate() const {
  if (!(gamma_min > 0.0) || gamma_min > gamma_max) {
    throw ConfigError("learning rates must satisfy 0 < gamma_min <= gamma_max");
  }
  if (warmup_epochs < 0 || warmup_epochs >= total_epochs) {
    throw ConfigError("warm-up epochs must satisfy 0 <= warmup < total");
  }
}

double cosine_lr(int64_t t, const LrSchedule& s) {
  s.validate();
  if (t < 0 || t > s.total_epochs) {
    throw UsageError("epoch index " + std::to_string(t) + " outside [0, " +
                     std::to_string(s.total_epochs) + "]");
  }
  if (t < s.warmup_epochs) {
    double frac = static_cast<double>(t) / static_cast<double>(s.warmup_epochs);
    return s.gamma_min + (s.gamma_max - s.gamma_min) * frac;
  }
  double frac = static_cast<double>(t - s.warmup_epochs) /
                static_cast<double>(s.total_epochs - s.warmup_epochs);
  return s.gamma_min + 0.5 * (s.gamma_max - s.gamma_min) * (1.0 + std::cos(frac * kPi));
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter<T>* p : params_) {
    m_.push_back(Tensor<T>::zeros_like(p->value));
    v_.push_back(Tensor<T>::zeros_like(p->value));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>* p = params_[i];
    if (!p->grad.same_shape(p->value)) {
      throw UsageError("adam: gradient missing for parameter '" + p->name + "'");
    }
    T* __restrict w = p->value.data();
    const T* __restrict g = p->grad.data();
    T* __restrict m = m_[i].data();
    T* __restrict v = v_[i].data();
    int64_t n = p->value.numel();
    T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    T one_m_b1 = static_cast<T>(1.0 - beta1_), one_m_b2 = static_cast<T>(1.0 - beta2_);
    T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
    T step_eps = static_cast<T>(eps_);
    T rate = static_cast<T>(lr);
    for (int64_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + one_m_b1 * g[k];
      v[k] = b2 * v[k] + one_m_b2 * g[k] * g[k];
      T mhat = m[k] * inv_bc1;
      T vhat = v[k] * inv_bc2;
      w[k] -= rate * mhat / (std::sqrt(vhat) + step_eps);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

NmseResult evaluate_nmse(DcrNet<float>& model, const Dataset& ds, int64_t batch_size) {
  if (ds.count() < 1) throw DataError("evaluate_nmse: dataset is empty");
  if (ds.na() != model.config().na || ds.nt() != model.config().nt) {
    throw DimensionError("dataset is " + std::to_string(ds.na()) + "x" + std::to_string(ds.nt()) +
                         ", model expects " + std::to_string(model.config().na) + "x" +
                         std::to_string(model.config().nt));
  }
  if (batch_size < 1) batch_size = ds.count();

  int64_t plane = 2 * ds.na() * ds.nt();
  double range = ds.norm_max - ds.norm_min;
  double lo = ds.norm_min;
  NmseAccumulator acc;

  std::vector<int64_t> order(static_cast<size_t>(ds.count()));
  std::iota(order.begin(), order.end(), 0);
  for (int64_t begin = 0; begin < ds.count(); begin += batch_size) {
    int64_t end = std::min(ds.count(), begin + batch_size);
    Tensor<float> batch = gather_batch(ds, order, begin, end);
    Tensor<float> recon = model.forward_eval(batch);
    for (int64_t i = 0; i < end - begin; ++i) {
      const float* x = batch.data() + i * plane;
      const float* y = recon.data() + i * plane;
      double num = 0.0, den = 0.0;
      for (int64_t k = 0; k < plane; ++k) {
        double xd = lo + range * static_cast<double>(x[k]);
        double yd = lo + range * static_cast<double>(y[k]);
        double e = xd - yd;
        num += e * e;
        den += xd * xd;
      }
      acc.add_ratio(num, den);
    }
  }
  if (acc.used == 0) throw DataError("evaluate_nmse: every sample had zero energy");
  return NmseResult{acc.db(), acc.skipped};
}

TrainReport train(DcrNet<float>& model, const Dataset& train_data, const Dataset& val_data,
                  const TrainOptions& options) {
  options.schedule.validate();
  if (options.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (options.epochs > options.schedule.total_epochs) {
    throw ConfigError("epochs exceed the schedule's total");
  }
  if (train_data.count() < 1) throw DataError("training dataset is empty");
  if (val_data.count() < 1) throw DataError("validation dataset is empty");
  if (options.batch_size < 1 || options.batch_size > train_data.count()) {
    throw ConfigError("batch size " + std::to_string(options.batch_size) +
                      " must lie in [1, " + std::to_string(train_data.count()) + "]");
  }

  bool persist = !options.out_dir.empty();
  if (persist) std::filesystem::create_directories(options.out_dir);

  TrainReport report;
  Adam<float> adam(model.parameters());
  int64_t n = train_data.count();
  int64_t plane = 2 * train_data.na() * train_data.nt();
  std::vector<int64_t> order(static_cast<size_t>(n));
  Tape<float> tape;

  for (int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = cosine_lr(epoch, options.schedule);

    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(options.seed, 0x9e0a5c3du + static_cast<uint64_t>(epoch)));
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = shuffle_rng.uniform_int(0, i);
      std::swap(order[i], order[j]);
    }

    double loss_sum = 0.0;
    for (int64_t begin = 0; begin < n; begin += options.batch_size) {
      int64_t end = std::min(n, begin + options.batch_size);
      Tensor<float> batch = gather_batch(train_data, order, begin, end);

      model.zero_grad();
      tape.clear();
      NodeId input = tape.leaf(batch);
      NodeId target = tape.leaf(batch);
      NodeId recon = model.forward(tape, input, true);
      NodeId loss = mse_loss(tape, recon, target);
      double loss_value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch));
      }
      tape.backward(loss);
      adam.step(lr);
      loss_sum += loss_value * static_cast<double>(end - begin);
    }

    NmseResult val = evaluate_nmse(model, val_data, options.batch_size);
    auto t1 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_nmse_db = val.db;
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    report.records.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (report.best_epoch < 0 || val.db < report.best_val_nmse_db) {
      report.best_epoch = epoch;
      report.best_val_nmse_db = val.db;
      if (persist) {
        report.best_checkpoint = options.out_dir + "/best.dcrm";
        model.save_checkpoint(report.best_checkpoint);
      }
    }
  }

  report.final_train_nmse_db = evaluate_nmse(model, train_data, options.batch_size).db;
  if (persist) {
    report.last_checkpoint = options.out_dir + "/last.dcrm";
    model.save_checkpoint(report.last_checkpoint);
    report.metrics_csv = options.out_dir + "/metrics.csv";
    write_metrics_csv(report.metrics_csv, report.records);
  }
  return report;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& records) {
  atomic_write_file(path, [&](std::ostream& os) {
    os << "epoch,lr,train_loss,val_nmse_db,seconds\n";
    char buf[192];
    for (const EpochRecord& r : records) {
      std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.3f\n",
                    static_cast<long long>(r.epoch), r.lr, r.train_loss, r.val_nmse_db,
                    r.seconds);
      os << buf;
    }
  });
}

}  // namespace dcrnet
