#ifndef MTLAM_TRAIN_HPP_
#define MTLAM_TRAIN_HPP_

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtlam/common.hpp"
#include "mtlam/encoder.hpp"
#include "mtlam/eval.hpp"
#include "mtlam/head.hpp"
#include "mtlam/loss.hpp"
#include "mtlam/record.hpp"
#include "mtlam/resources.hpp"
#include "mtlam/thresholds.hpp"

namespace mtlam {

struct TrainConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  /// Fraction of all optimizer steps spent ramping the learning rate up.
  double warmup_fraction = 0.05;
  std::size_t batch_size = 256;
  std::size_t early_stop_patience = 2;
  std::size_t max_epochs = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Update encoder parameters too (when the encoder is trainable).
  bool train_encoder = true;

  void check() const {
    if (learning_rate < 0 || weight_decay < 0) throw ConfigError("train: rates must be nonnegative");
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) {
      throw ConfigError("train: warmup_fraction must be in [0, 1)");
    }
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (early_stop_patience == 0) throw ConfigError("train: early_stop_patience must be >= 1");
    if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup from 0 over the first warmup_fraction * total_steps steps,
/// then constant.
inline double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step >= total_steps) throw std::out_of_range("lr_schedule: step beyond total_steps");
  const double warmup = cfg.warmup_fraction * static_cast<double>(total_steps);
  if (static_cast<double>(step) >= warmup) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) / warmup;
}

/// Adam moments with decoupled weight decay: each step first shrinks the
/// parameters by (1 - lr * weight_decay), then applies the bias-corrected
/// adaptive update.
class AdamW {
 public:
  AdamW(std::size_t size, const TrainConfig& cfg)
      : m_(size, 0.0), v_(size, 0.0), beta1_(cfg.beta1), beta2_(cfg.beta2),
        eps_(cfg.adam_epsilon), decay_(cfg.weight_decay) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw std::invalid_argument("AdamW: size mismatch");
    }
    ++t_;
    const double shrink = 1.0 - lr * decay_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] *= shrink;
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_, decay_;
  std::size_t t_ = 0;
};

/// Patience rule on a monitored loss: stop once `patience` consecutive epochs
/// fail to go strictly below the best value so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("early stopping: patience must be >= 1");
  }

  /// Records one epoch's loss; true means stop now.
  bool observe(double loss) {
    ++epoch_;
    improved_ = !best_epoch_ || loss < best_loss_;
    if (improved_) {
      best_loss_ = loss;
      best_epoch_ = epoch_;
      stale_ = 0;
    } else {
      ++stale_;
    }
    return stale_ >= patience_;
  }

  bool improved() const { return improved_; }
  /// 1-based epoch of the best loss; 0 before any observation.
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_loss_ = 0;
  bool improved_ = false;
};

/// Encoder plus head.
struct Model {
  std::unique_ptr<TextEncoder> encoder;
  HeadParams head;

  Model clone() const { return {encoder->clone(), head}; }
};

inline Model make_model(EncoderConfig enc, HeadConfig head, std::uint64_t seed) {
  enc.seed = seed;
  Model m;
  m.encoder = load_encoder(enc);
  head.input_dim = m.encoder->embedding_dim();
  Rng rng(derive_seed(seed, "init", "head"));
  m.head = init_head(head, rng);
  return m;
}

inline std::vector<const Record*> pointers(const std::vector<Record>& records,
                                           std::optional<TaskId> only_task = std::nullopt) {
  std::vector<const Record*> out;
  for (const auto& r : records) {
    if (!only_task || r.labels[*only_task]) out.push_back(&r);
  }
  return out;
}

/// EVAL-mode probabilities (n x 10), computed in batches.
inline Matrix predict(const Model& model, std::span<const Record* const> records,
                      std::size_t batch_size = 256) {
  Matrix out(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(kNumTasks));
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t end = std::min(records.size(), start + batch_size);
    std::vector<std::string> texts;
    for (std::size_t i = start; i < end; ++i) texts.push_back(records[i]->text);
    const auto tr = forward(model.encoder->encode(texts), model.head, Mode::kEval);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        tr.probabilities;
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::array<std::optional<double>, kNumTasks> val_f1{};
  double mean_val_f1 = 0;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;
  std::uint64_t peak_memory_bytes = 0;
};

struct TrainOptions {
  /// Train a single-task model: only records labeled for this task are used
  /// and only its loss term is active.
  std::optional<TaskId> only_task;
  /// Skip validation entirely (used for fixed-epoch profiling runs).
  bool validate = true;
};

struct TrainResult {
  TrainHistory history;
  /// 1-based epoch whose parameters were kept.
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  bool diverged = false;
  std::string diagnostic;
};

struct Evaluation {
  double loss = 0;
  MetricsReport report;
  ThresholdSet thresholds;
};

/// Loss, tuned thresholds and metrics of a model on one record set.
inline Evaluation evaluate_model(const Model& model, const std::vector<const Record*>& records,
                                 const LossWeights& weights, std::optional<TaskId> only_task = std::nullopt,
                                 const std::optional<ThresholdSet>& thresholds = std::nullopt) {
  if (records.empty()) throw DataError("evaluate: no records");
  const Matrix probs = predict(model, records);
  const LabelBatch lb = make_label_batch(records, only_task);
  Evaluation ev;
  ev.loss = masked_bce(probs, lb.labels, lb.mask, weights).value;
  ev.thresholds = thresholds ? *thresholds : tune_all(probs, lb.labels, lb.mask).thresholds;
  ev.report = evaluate(probs, lb.labels, lb.mask, ev.thresholds);
  return ev;
}

/// Mini-batch training with AdamW, warmup and early stopping on validation
/// loss. On return `model` holds the parameters of the best validation epoch
/// (or, after divergence, the last finite parameters).
inline TrainResult train(Model& model, const std::vector<Record>& train_records,
                         const std::vector<Record>& val_records, const LossWeights& weights,
                         const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.check();
  const auto train_set = pointers(train_records, opts.only_task);
  const auto val_set = pointers(val_records, opts.only_task);
  if (train_set.empty()) throw DataError("train: empty TRAIN split");
  if (opts.validate && val_set.empty()) throw DataError("train: empty VAL split");

  reset_peak_resident();
  const Stopwatch total_clock;
  const bool update_encoder = cfg.train_encoder && model.encoder->trainable();
  const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.max_epochs;

  AdamW head_opt(model.head.values.size(), cfg);
  std::optional<AdamW> enc_opt;
  if (update_encoder) enc_opt.emplace(model.encoder->parameters().size(), cfg);
  std::vector<double> head_grad(model.head.values.size());
  std::vector<double> enc_grad(update_encoder ? model.encoder->parameters().size() : 0);

  Rng order_rng(derive_seed(cfg.seed, "batch-order"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  EarlyStopping stopper(cfg.early_stop_patience);
  HeadParams best_head = model.head;
  std::vector<double> best_enc;
  if (update_encoder) best_enc.assign(model.encoder->parameters().begin(), model.encoder->parameters().end());

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  model.encoder->set_mode(Mode::kTrain);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const Stopwatch epoch_clock;
    shuffle(order, order_rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Record*> batch;
      std::vector<std::string> texts;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train_set[order[i]]);
        texts.push_back(train_set[order[i]]->text);
      }
      const Matrix emb = model.encoder->encode(texts);
      HeadCache cache;
      const auto trace = forward(emb, model.head, Mode::kTrain, &dropout_rng, &cache);
      const LabelBatch lb = make_label_batch(batch, opts.only_task);
      const LossValue loss = masked_bce(trace.probabilities, lb.labels, lb.mask, weights, true);
      if (!std::isfinite(loss.value) || !loss.gradient.allFinite()) {
        result.diverged = true;
        result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + "; kept the last finite parameters";
        break;
      }
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      const Matrix d_emb = backward(model.head, trace, cache, loss.gradient, head_grad);
      const double lr = lr_schedule(step, total_steps, cfg);
      head_opt.step(model.head.values, head_grad, lr);
      if (update_encoder) {
        std::fill(enc_grad.begin(), enc_grad.end(), 0.0);
        model.encoder->accumulate_gradient(texts, d_emb, enc_grad);
        enc_opt->step(model.encoder->parameters(), enc_grad, lr);
      }
      loss_sum += loss.value * static_cast<double>(batch.size());
    }
    if (result.diverged) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    model.encoder->set_mode(Mode::kEval);
    if (opts.validate) {
      const Evaluation ev = evaluate_model(model, val_set, weights, opts.only_task);
      rec.val_loss = ev.loss;
      for (TaskId t = 0; t < kNumTasks; ++t) {
        if (ev.report.tasks[t]) rec.val_f1[t] = ev.report.tasks[t]->f1;
      }
      rec.mean_val_f1 = ev.report.aggregate.f1;
    }
    model.encoder->set_mode(Mode::kTrain);
    rec.seconds = epoch_clock.seconds();
    result.history.epochs.push_back(rec);

    if (!opts.validate) {
      result.best_epoch = epoch;
      continue;
    }
    const bool stop = stopper.observe(rec.val_loss);
    if (stopper.improved()) {
      best_head = model.head;
      if (update_encoder) {
        best_enc.assign(model.encoder->parameters().begin(), model.encoder->parameters().end());
      }
    }
    result.best_epoch = stopper.best_epoch();
    if (stop) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  model.encoder->set_mode(Mode::kEval);
  if (opts.validate && !result.diverged && stopper.best_epoch() > 0) {
    model.head = best_head;
    if (update_encoder) std::copy(best_enc.begin(), best_enc.end(), model.encoder->parameters().begin());
  }
  result.history.wall_seconds = total_clock.seconds();
  result.history.peak_memory_bytes = peak_resident_bytes();
  return result;
}

/// Head and training settings of one run.
struct RunSettings {
  HeadConfig head;
  TrainConfig train;

  bool operator==(const RunSettings&) const = default;
};

/// Axes in a fixed order; the cartesian product is enumerated with the last
/// axis varying fastest.
struct GridSpec {
  std::vector<std::pair<std::string, std::vector<double>>> axes;

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& [_, values] : axes) n *= values.size();
    return n;
  }
};

/// 3 learning rates x 2 dropout rates x 3 widths x 2 batch sizes x 2 warmups = 72.
inline GridSpec default_grid() {
  return {{{"learning_rate", {1e-4, 3e-4, 1e-3}},
           {"dropout_rate", {0.2, 0.4}},
           {"hidden_width", {16, 22, 32}},
           {"batch_size", {128, 256}},
           {"warmup_fraction", {0.05, 0.1}}}};
}

inline void set_axis(RunSettings& s, const std::string& name, double v) {
  if (name == "learning_rate") {
    s.train.learning_rate = v;
  } else if (name == "weight_decay") {
    s.train.weight_decay = v;
  } else if (name == "warmup_fraction") {
    s.train.warmup_fraction = v;
  } else if (name == "batch_size") {
    s.train.batch_size = static_cast<std::size_t>(v);
  } else if (name == "max_epochs") {
    s.train.max_epochs = static_cast<std::size_t>(v);
  } else if (name == "dropout_rate") {
    s.head.dropout_rate = v;
  } else if (name == "hidden_width") {
    s.head.hidden_width = static_cast<std::size_t>(v);
  } else {
    throw ConfigError("grid: unknown hyperparameter '" + name + "'");
  }
}

inline std::vector<RunSettings> expand(const GridSpec& grid, const RunSettings& base) {
  for (const auto& [name, values] : grid.axes) {
    if (values.empty()) throw ConfigError("grid: axis '" + name + "' is empty");
  }
  std::vector<RunSettings> out;
  const std::size_t n = grid.size();
  for (std::size_t idx = 0; idx < n; ++idx) {
    RunSettings s = base;
    std::size_t rem = idx;
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      const auto& [name, values] = grid.axes[a];
      set_axis(s, name, values[rem % values.size()]);
      rem /= values.size();
    }
    out.push_back(s);
  }
  return out;
}

struct GridRun {
  RunSettings settings;
  double mean_val_f1 = 0;
  double val_loss = 0;
  std::size_t best_epoch = 0;
  std::optional<std::string> error;
};

/// Highest mean validation F1, then lowest validation loss, then grid order.
/// Failed runs never win.
inline std::size_t select_best(const std::vector<GridRun>& runs) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].error) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& a = runs[i];
    const auto& b = runs[*best];
    if (a.mean_val_f1 > b.mean_val_f1 || (a.mean_val_f1 == b.mean_val_f1 && a.val_loss < b.val_loss)) {
      best = i;
    }
  }
  if (!best) throw std::runtime_error("grid search: every run failed");
  return *best;
}

struct GridResult {
  std::vector<GridRun> runs;
  std::size_t best = 0;
};

/// Trains every grid point from a fresh model and picks the best by
/// validation F1 of its restored parameters.
inline GridResult grid_search(const GridSpec& grid, const RunSettings& base,
                              const EncoderConfig& encoder, const std::vector<Record>& train_records,
                              const std::vector<Record>& val_records, const LossWeights& weights) {
  if (grid.axes.empty()) throw ConfigError("grid: no axes");
  GridResult result;
  for (const auto& settings : expand(grid, base)) {
    GridRun run{settings, 0, 0, 0, std::nullopt};
    try {
      Model model = make_model(encoder, settings.head, settings.train.seed);
      const TrainResult tr = train(model, train_records, val_records, weights, settings.train);
      if (tr.diverged) throw std::runtime_error(tr.diagnostic);
      const EpochRecord& best = tr.history.epochs.at(tr.best_epoch - 1);
      run.mean_val_f1 = best.mean_val_f1;
      run.val_loss = best.val_loss;
      run.best_epoch = tr.best_epoch;
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    result.runs.push_back(std::move(run));
  }
  result.best = select_best(result.runs);
  return result;
}

}  // namespace mtlam

#endif  // MTLAM_TRAIN_HPP_
