#ifndef MTLAM_THRESHOLDS_HPP_
#define MTLAM_THRESHOLDS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlam/common.hpp"
#include "mtlam/record.hpp"
#include "mtlam/tasks.hpp"

namespace mtlam {

inline constexpr double kThresholdSentinel = 1e-7;

struct TuneResult {
  double threshold = 0.5;
  /// Youden's J = TPR - FPR at the chosen threshold.
  double youden_j = 0.0;
  std::optional<std::string> diagnostic;
};

/// Midpoints between consecutive distinct scores plus the two sentinels,
/// ascending. J is constant between these points, so scanning them is exact.
inline std::vector<double> candidate_thresholds(std::span<const double> scores) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> out{kThresholdSentinel};
  for (std::size_t i = 1; i < sorted.size(); ++i) out.push_back(0.5 * (sorted[i - 1] + sorted[i]));
  out.push_back(1.0 - kThresholdSentinel);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Threshold maximizing TPR - FPR for the rule `score > threshold`. Ties go to
/// the candidate closest to 0.5, then to the lower one; when every candidate
/// ties, 0.5 itself. Labels of a single class yield 0.5 with a diagnostic.
inline TuneResult tune(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("tune: scores and labels differ in length");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos : neg).push_back(scores[i]);
  if (pos.empty() || neg.empty()) {
    return {0.5, 0.0, std::string("single-class labels; threshold left at 0.5")};
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  const auto P = static_cast<long long>(pos.size());
  const auto N = static_cast<long long>(neg.size());
  const auto above = [](const std::vector<double>& v, double thr) {
    return static_cast<long long>(v.end() - std::upper_bound(v.begin(), v.end(), thr));
  };

  // J * P * N = TP * N - FP * P compares exactly in integers.
  std::optional<long long> best;
  double best_thr = 0.5;
  bool all_equal = true;
  for (double thr : candidate_thresholds(scores)) {
    const long long score = above(pos, thr) * N - above(neg, thr) * P;
    if (best && score != *best) all_equal = false;
    const bool better = !best || score > *best ||
                        (score == *best && std::abs(thr - 0.5) < std::abs(best_thr - 0.5));
    if (better) {
      best = score;
      best_thr = thr;
    }
  }
  // A flat J curve carries no ranking information; keep the neutral default.
  if (all_equal) best_thr = 0.5;
  return {best_thr, static_cast<double>(*best) / static_cast<double>(P * N), std::nullopt};
}

/// One threshold per task.
struct ThresholdSet {
  std::array<double, kNumTasks> values = [] {
    std::array<double, kNumTasks> v{};
    v.fill(0.5);
    return v;
  }();

  bool operator==(const ThresholdSet&) const = default;
};

/// 1 iff probability > threshold.
inline Eigen::MatrixXi apply(const Matrix& probabilities, const ThresholdSet& thresholds) {
  if (probabilities.cols() != static_cast<Eigen::Index>(kNumTasks)) {
    throw std::invalid_argument("apply: expected 10 probability columns");
  }
  Eigen::MatrixXi out(probabilities.rows(), probabilities.cols());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double thr = thresholds.values[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = probabilities(i, j) > thr ? 1 : 0;
  }
  return out;
}

struct TunedThresholds {
  ThresholdSet thresholds;
  std::vector<Diagnostic> diagnostics;
};

/// Tunes every task on the rows whose mask selects it.
inline TunedThresholds tune_all(const Matrix& probabilities, const Matrix& labels, const Matrix& mask) {
  const auto& reg = TaskRegistry::instance();
  TunedThresholds out;
  for (const auto& spec : reg.tasks()) {
    const auto t = static_cast<Eigen::Index>(spec.id);
    std::vector<double> s;
    std::vector<Label> y;
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
      if (mask(i, t) == 0.0) continue;
      s.push_back(probabilities(i, t));
      y.push_back(labels(i, t) > 0.5 ? 1 : 0);
    }
    const auto r = tune(s, y);
    out.thresholds.values[spec.id] = r.threshold;
    if (r.diagnostic) out.diagnostics.push_back({std::string(spec.slug), *r.diagnostic});
  }
  return out;
}

inline nlohmann::ordered_json to_json(const ThresholdSet& t) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  nlohmann::ordered_json values = nlohmann::ordered_json::object();
  for (const auto& spec : TaskRegistry::instance().tasks()) {
    values[std::string(spec.slug)] = t.values[spec.id];
  }
  j["thresholds"] = std::move(values);
  return j;
}

inline ThresholdSet thresholds_from_json(const nlohmann::json& j) {
  const auto& reg = TaskRegistry::instance();
  if (j.value("version", 0) != 1) throw DataError("thresholds: unsupported version");
  ThresholdSet t;
  std::array<bool, kNumTasks> seen{};
  for (const auto& [slug, value] : j.at("thresholds").items()) {
    const auto id = reg.find_slug(slug);
    if (!id) throw DataError("thresholds: unknown task '" + slug + "'");
    const double v = value.get<double>();
    if (!(v > 0 && v < 1)) throw DataError("thresholds: value for " + slug + " outside (0, 1)");
    t.values[*id] = v;
    seen[*id] = true;
  }
  for (const auto& spec : reg.tasks()) {
    if (!seen[spec.id]) throw DataError("thresholds: missing task " + std::string(spec.slug));
  }
  return t;
}

inline void save_thresholds(const std::string& path, const ThresholdSet& t) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(t).dump(2) << '\n';
}

inline ThresholdSet load_thresholds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  return thresholds_from_json(nlohmann::json::parse(in));
}

}  // namespace mtlam

#endif  // MTLAM_THRESHOLDS_HPP_
