#ifndef POWERFORMER_TRAIN_HPP
#define POWERFORMER_TRAIN_HPP

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "powerformer/data.hpp"
#include "powerformer/model.hpp"

namespace powerformer {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// MSE, MAE and MAPE (percent). Wind power is frequently exactly zero, so
/// MAPE terms with |y| < 1e-6 are excluded and counted instead of dividing
/// by zero.
struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double mape = 0.0;
  std::size_t mape_excluded = 0;
};

inline double mse(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size())
    throw std::invalid_argument("mse: inputs must be equal-length and non-empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

inline double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.empty() || y.size() != yhat.size())
    throw std::invalid_argument("mae: inputs must be equal-length and non-empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

inline double mape(const std::vector<double>& y, const std::vector<double>& yhat,
                   std::size_t* excluded = nullptr) {
  if (y.empty() || y.size() != yhat.size())
    throw std::invalid_argument("mape: inputs must be equal-length and non-empty");
  double acc = 0.0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::fabs(y[i]) < 1e-6) {
      ++skipped;
      continue;
    }
    acc += std::fabs((y[i] - yhat[i]) / y[i]);
    ++used;
  }
  if (excluded) *excluded = skipped;
  return used == 0 ? 0.0 : 100.0 * acc / static_cast<double>(used);
}

inline Metrics compute_metrics(const std::vector<double>& y,
                               const std::vector<double>& yhat) {
  Metrics m;
  m.mse = mse(y, yhat);
  m.mae = mae(y, yhat);
  m.mape = mape(y, yhat, &m.mape_excluded);
  return m;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter first/second moment state with bias correction.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamOptions opts)
      : params_(std::move(params)), opts_(opts) {
    for (Tensor* p : params_) {
      m_.push_back(Tensor::zeros(p->shape()));
      v_.push_back(Tensor::zeros(p->shape()));
    }
  }

  std::size_t step_count() const { return step_; }

  void step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size())
      throw std::invalid_argument("Adam::step: gradient count mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor* p = params_[i];
      if (grads[i].shape() != p->shape())
        throw std::invalid_argument("Adam::step: gradient shape mismatch");
      double* m = m_[i].data();
      double* v = v_[i].data();
      double* w = p->data();
      const double* g = grads[i].data();
      for (std::size_t k = 0; k < p->size(); ++k) {
        m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * g[k];
        v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * g[k] * g[k];
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        w[k] -= opts_.learning_rate * m_hat / (std::sqrt(v_hat) + opts_.eps);
      }
    }
  }

 private:
  std::vector<Tensor*> params_;
  AdamOptions opts_;
  std::vector<Tensor> m_, v_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence baseline
// ---------------------------------------------------------------------------

/// Naive yardstick: every horizon step is predicted as the last observed
/// power value of the input window. Evaluated over the same sliding windows
/// as the model.
inline Metrics persistence_baseline(const FeatureMatrix& m, std::size_t input_len,
                                    std::size_t pred_len, std::size_t stride) {
  const std::vector<std::size_t> starts =
      window_starts(m.n_rows(), input_len, pred_len, stride);
  std::vector<double> truth, pred;
  truth.reserve(starts.size() * pred_len);
  pred.reserve(starts.size() * pred_len);
  for (std::size_t s : starts) {
    const double last = m.target[s + input_len - 1];
    for (std::size_t p = 0; p < pred_len; ++p) {
      truth.push_back(m.target[s + input_len + p]);
      pred.push_back(last);
    }
  }
  return compute_metrics(truth, pred);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t epochs = 5;
  double learning_rate = 1e-3;
  std::size_t patience = 2;
  BackpropMode backprop = BackpropMode::kReconstruct;
  bool shuffle = true;
  std::uint64_t shuffle_seed = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;  // wall time; kept out of the deterministic report
  std::uint64_t peak_bytes = 0;
  std::uint64_t score_entries = 0;
};

/// Per-epoch losses plus final test metrics in normalized units and MW.
/// `write` emits the deterministic record (reproducible byte-for-byte for a
/// fixed config/data/seed); wall-clock timings go to a separate file.
struct TrainReport {
  std::vector<EpochRecord> epochs;
  Metrics test_normalized;
  Metrics test_mw;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  bool diverged = false;

  void write(const std::string& path) const {
    std::ofstream file(path);
    if (!file) throw std::runtime_error("TrainReport: cannot open " + path);
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    file << "powerformer training report v1\n";
    for (const EpochRecord& e : epochs)
      file << "epoch " << e.epoch << " train_mse " << num(e.train_loss) << " val_mse "
           << num(e.val_loss) << " peak_bytes " << e.peak_bytes << " score_entries "
           << e.score_entries << "\n";
    file << "best_epoch " << best_epoch << "\n";
    file << "stopped_early " << (stopped_early ? 1 : 0) << "\n";
    file << "diverged " << (diverged ? 1 : 0) << "\n";
    file << "test_normalized mse " << num(test_normalized.mse) << " mae "
         << num(test_normalized.mae) << " mape " << num(test_normalized.mape)
         << " mape_excluded " << test_normalized.mape_excluded << "\n";
    file << "test_mw mse " << num(test_mw.mse) << " mae " << num(test_mw.mae)
         << " mape " << num(test_mw.mape) << " mape_excluded "
         << test_mw.mape_excluded << "\n";
  }

  void write_timing(const std::string& path) const {
    std::ofstream file(path);
    if (!file) throw std::runtime_error("TrainReport: cannot open " + path);
    file << "powerformer timing (wall clock, non-deterministic)\n";
    double total = 0.0;
    for (const EpochRecord& e : epochs) {
      file << "epoch " << e.epoch << " seconds " << e.seconds << "\n";
      total += e.seconds;
    }
    file << "total_seconds " << total << "\n";
  }
};

namespace detail {

inline double validation_loss(const Model& model, const std::vector<WindowBatch>& batches) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const WindowBatch& b : batches) {
    Tensor yhat = model.forward(b.inputs).y_hat;
    for (std::size_t i = 0; i < yhat.size(); ++i) {
      const double d = yhat.data()[i] - b.targets.data()[i];
      acc += d * d;
    }
    count += yhat.size();
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

}  // namespace detail

/// Minimize MSE with Adam, early-stop on validation loss, keep the
/// best-validation parameters, and score the retained model on the test
/// split. Divergence (non-finite loss) aborts with the report so far marked
/// diverged.
inline TrainReport train(Model& model, const Dataset& data, const TrainOptions& opts) {
  if (data.train.empty() || data.val.empty() || data.test.empty())
    throw std::invalid_argument("train: all three splits need at least one window batch");

  auto named = model.parameters();
  std::vector<Tensor*> params;
  for (auto& [name, p] : named) params.push_back(p);
  AdamOptions adam_opts;
  adam_opts.learning_rate = opts.learning_rate;
  Adam adam(params, adam_opts);

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    attention_cost::reset();
    memstat::reset_peak();

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    if (opts.shuffle) {
      Rng rng(opts.shuffle_seed + epoch);
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.index(i)]);
    }

    double train_acc = 0.0;
    std::size_t train_terms = 0;
    bool blew_up = false;
    for (std::size_t idx : order) {
      const WindowBatch& batch = data.train[idx];
      try {
        Model::LossGrads lg =
            model.loss_and_gradients(batch.inputs, batch.targets, opts.backprop);
        if (!std::isfinite(lg.loss)) {
          blew_up = true;
          break;
        }
        adam.step(lg.grads);
        train_acc += lg.loss * static_cast<double>(batch.targets.size());
        train_terms += batch.targets.size();
      } catch (const std::runtime_error&) {
        // finite checks surface exploding values as exceptions
        blew_up = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_terms ? train_acc / static_cast<double>(train_terms)
                                 : std::numeric_limits<double>::quiet_NaN();
    double val = std::numeric_limits<double>::quiet_NaN();
    if (!blew_up) {
      try {
        val = detail::validation_loss(model, data.val);
      } catch (const std::runtime_error&) {
        blew_up = true;
      }
    }
    rec.val_loss = val;
    rec.peak_bytes = memstat::peak_bytes();
    rec.score_entries = attention_cost::score_entries();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);

    if (blew_up || !std::isfinite(val) || !std::isfinite(rec.train_loss)) {
      report.diverged = true;
      break;
    }

    if (val < best_val) {
      best_val = val;
      report.best_epoch = epoch;
      best_params.clear();
      for (Tensor* p : params) best_params.push_back(p->clone());
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= opts.patience) {
        report.stopped_early = true;
        break;
      }
    }
  }

  // retain the best-validation parameters
  if (!best_params.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      std::copy(best_params[i].data(), best_params[i].data() + best_params[i].size(),
                params[i]->data());

  if (!report.diverged) {
    std::vector<double> truth, pred, truth_mw, pred_mw;
    for (const WindowBatch& b : data.test) {
      Tensor yhat = model.forward(b.inputs).y_hat;
      for (std::size_t i = 0; i < yhat.size(); ++i) {
        truth.push_back(b.targets.data()[i]);
        pred.push_back(yhat.data()[i]);
        truth_mw.push_back(data.normalizer.denormalize_target(b.targets.data()[i]));
        pred_mw.push_back(data.normalizer.denormalize_target(yhat.data()[i]));
      }
    }
    report.test_normalized = compute_metrics(truth, pred);
    report.test_mw = compute_metrics(truth_mw, pred_mw);
  }
  return report;
}

}  // namespace powerformer

#endif  // POWERFORMER_TRAIN_HPP
