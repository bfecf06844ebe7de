#ifndef MTLAM_LOSS_HPP_
#define MTLAM_LOSS_HPP_

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mtlam/common.hpp"
#include "mtlam/corpus.hpp"
#include "mtlam/record.hpp"
#include "mtlam/tasks.hpp"

namespace mtlam {

inline constexpr double kProbabilityClip = 1e-7;

/// Task-type weights nu_k and per-task class weights w_t^c.
struct LossWeights {
  std::array<double, kNumTaskTypes> type_weights{1.0, 1.0, 1.0};
  std::array<std::array<double, 2>, kNumTasks> class_weights = [] {
    std::array<std::array<double, 2>, kNumTasks> w{};
    for (auto& row : w) row = {1.0, 1.0};
    return w;
  }();

  bool operator==(const LossWeights&) const = default;
};

/// nu_k = (1/|D_k|) / sum_k' (1/|D_k'|).
///
/// Evaluated as prod_{k' != k} |D_k'| / sum of those products, which is exact
/// in integers whenever the products stay below 2^53.
inline std::array<double, kNumTaskTypes> compute_type_weights(
    const std::array<std::size_t, kNumTaskTypes>& type_sizes) {
  for (TaskType k : kAllTaskTypes) {
    if (type_sizes[index_of(k)] == 0) {
      throw DataError("type weights: task type " + std::string(to_string(k)) + " has no records");
    }
  }
  std::array<unsigned __int128, kNumTaskTypes> prod{};
  unsigned __int128 sum = 0;
  bool exact = true;
  for (std::size_t k = 0; k < kNumTaskTypes; ++k) {
    prod[k] = 1;
    for (std::size_t o = 0; o < kNumTaskTypes; ++o) {
      if (o != k) prod[k] *= type_sizes[o];
    }
    sum += prod[k];
  }
  const unsigned __int128 limit = static_cast<unsigned __int128>(1) << 53;
  exact = sum < limit;
  std::array<double, kNumTaskTypes> nu{};
  if (exact) {
    for (std::size_t k = 0; k < kNumTaskTypes; ++k) {
      nu[k] = static_cast<double>(prod[k]) / static_cast<double>(sum);
    }
  } else {
    double s = 0;
    for (std::size_t k = 0; k < kNumTaskTypes; ++k) s += 1.0 / static_cast<double>(type_sizes[k]);
    for (std::size_t k = 0; k < kNumTaskTypes; ++k) {
      nu[k] = (1.0 / static_cast<double>(type_sizes[k])) / s;
    }
  }
  return nu;
}

inline std::array<double, kNumTaskTypes> compute_type_weights(const DatasetStats& st) {
  return compute_type_weights(st.type_sizes);
}

/// w_t^c = (1/p_t^c) / mean_c (1/p_t^c); the two weights of a task average to 1.
inline std::array<double, 2> class_weights_for(const std::array<double, 2>& balance) {
  const double inv0 = 1.0 / balance[0];
  const double inv1 = 1.0 / balance[1];
  const double mean = 0.5 * (inv0 + inv1);
  return {inv0 / mean, inv1 / mean};
}

inline std::array<std::array<double, 2>, kNumTasks> compute_class_weights(const DatasetStats& st) {
  const auto& reg = TaskRegistry::instance();
  std::array<std::array<double, 2>, kNumTasks> w{};
  for (const auto& spec : reg.tasks()) {
    const auto& ts = st.tasks[spec.id];
    for (int c = 0; c < 2; ++c) {
      if (ts.class_counts[c] == 0 || !(ts.class_balance[c] > 0)) {
        throw DataError("class weights: task " + std::string(spec.name) + " has no TRAIN examples of class '" +
                        std::string(spec.classes[c]) + "'");
      }
    }
    w[spec.id] = class_weights_for(ts.class_balance);
  }
  return w;
}

inline LossWeights compute_loss_weights(const DatasetStats& st) {
  return {compute_type_weights(st), compute_class_weights(st)};
}

/// Dense label and mask matrices (batch x 10) for a batch of records. Entries
/// of unlabeled tasks are 0 in both.
struct LabelBatch {
  Matrix labels;
  Matrix mask;
};

inline LabelBatch make_label_batch(std::span<const Record* const> batch,
                                   std::optional<TaskId> only_task = std::nullopt) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  LabelBatch lb{Matrix::Zero(n, kNumTasks), Matrix::Zero(n, kNumTasks)};
  for (Eigen::Index j = 0; j < n; ++j) {
    for (TaskId t = 0; t < kNumTasks; ++t) {
      if (only_task && t != *only_task) continue;
      if (const auto& l = batch[static_cast<std::size_t>(j)]->labels[t]) {
        lb.labels(j, static_cast<Eigen::Index>(t)) = *l;
        lb.mask(j, static_cast<Eigen::Index>(t)) = 1.0;
      }
    }
  }
  return lb;
}

struct LossValue {
  double value = 0;
  /// dLoss/dprobabilities; empty unless requested.
  Matrix gradient;
};

namespace detail {

// Per-entry coefficient nu_k / (|T_k| n_k), where n_k counts the batch rows of
// type k. A row's type is that of the tasks its mask selects.
inline Matrix loss_coefficients(const Matrix& mask, const LossWeights& w) {
  const auto& reg = TaskRegistry::instance();
  const Eigen::Index n = mask.rows();
  std::vector<std::size_t> row_type(static_cast<std::size_t>(n));
  std::array<double, kNumTaskTypes> count{};
  for (Eigen::Index j = 0; j < n; ++j) {
    std::optional<std::size_t> type;
    for (TaskId t = 0; t < kNumTasks; ++t) {
      if (mask(j, static_cast<Eigen::Index>(t)) == 0.0) continue;
      const std::size_t k = index_of(reg.task(t).type);
      if (type && *type != k) {
        throw std::invalid_argument("label mask row " + std::to_string(j) + " mixes task types");
      }
      type = k;
    }
    if (!type) throw std::invalid_argument("label mask row " + std::to_string(j) + " is empty");
    row_type[static_cast<std::size_t>(j)] = *type;
    count[*type] += 1.0;
  }
  std::array<double, kNumTasks> per_task{};
  for (const auto& spec : reg.tasks()) {
    const std::size_t k = index_of(spec.type);
    per_task[spec.id] = count[k] > 0 ? w.type_weights[k] /
                                           (static_cast<double>(reg.task_count(spec.type)) * count[k])
                                     : 0.0;
  }
  Matrix coef(n, static_cast<Eigen::Index>(kNumTasks));
  for (Eigen::Index t = 0; t < coef.cols(); ++t) coef.col(t).setConstant(per_task[static_cast<std::size_t>(t)]);
  return coef;
}

}  // namespace detail

/// Task-type and class weighted masked binary cross-entropy:
///
///   L = sum_k nu_k / |T_k| * mean_{j in batch of type k} sum_{t in T_k}
///         mask(j,t) * w_t^{y_jt} * BCE(p_jt, y_jt)
///
/// with probabilities clipped to [1e-7, 1 - 1e-7]. Evaluated with whole-matrix
/// operations; masked-out entries contribute exactly zero.
inline LossValue masked_bce(const Matrix& probabilities, const Matrix& labels, const Matrix& mask,
                            const LossWeights& weights, bool with_gradient = false) {
  if (probabilities.rows() != labels.rows() || probabilities.rows() != mask.rows() ||
      probabilities.cols() != static_cast<Eigen::Index>(kNumTasks) ||
      labels.cols() != probabilities.cols() || mask.cols() != probabilities.cols()) {
    throw std::invalid_argument("masked_bce: shape mismatch");
  }
  const double eps = kProbabilityClip;
  const Matrix coef = detail::loss_coefficients(mask, weights);

  Matrix class_w(labels.rows(), labels.cols());
  for (Eigen::Index t = 0; t < labels.cols(); ++t) {
    const auto& w = weights.class_weights[static_cast<std::size_t>(t)];
    class_w.col(t) = (labels.col(t).array() > 0.5).select(w[1], Vector::Constant(labels.rows(), w[0]));
  }
  const auto p = probabilities.array().max(eps).min(1.0 - eps);
  const auto y = labels.array();
  const Eigen::ArrayXXd bce = -(y * p.log() + (1.0 - y) * (1.0 - p).log());
  const Eigen::ArrayXXd scale = mask.array() * coef.array() * class_w.array();

  LossValue out;
  out.value = (scale * bce).sum();
  if (with_gradient) {
    const auto inside = (probabilities.array() >= eps && probabilities.array() <= 1.0 - eps).cast<double>();
    out.gradient = (scale * inside * (-y / p + (1.0 - y) / (1.0 - p))).matrix();
  }
  return out;
}

}  // namespace mtlam

#endif  // MTLAM_LOSS_HPP_
