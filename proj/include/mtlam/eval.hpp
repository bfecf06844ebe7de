#ifndef MTLAM_EVAL_HPP_
#define MTLAM_EVAL_HPP_

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mtlam/common.hpp"
#include "mtlam/corpus.hpp"
#include "mtlam/record.hpp"
#include "mtlam/tasks.hpp"
#include "mtlam/text.hpp"
#include "mtlam/thresholds.hpp"

namespace mtlam {

/// Class-weighted metrics of one binary task, in percent.
struct Metrics {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double accuracy = 0;
  std::size_t support = 0;

  bool operator==(const Metrics&) const = default;
};

/// One-vs-rest precision, recall and F1 per class, averaged with weights equal
/// to each class's true support. Undefined ratios (no predictions, no
/// support) count as 0.
inline Metrics weighted_metrics(std::span<const Label> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("weighted_metrics: length mismatch");
  }
  if (labels.empty()) throw DataError("weighted_metrics: empty input");
  std::array<std::array<double, 2>, 2> cm{};  // cm[true][pred]
  for (std::size_t i = 0; i < labels.size(); ++i) cm[labels[i] ? 1 : 0][predictions[i] ? 1 : 0] += 1;
  const double n = static_cast<double>(labels.size());
  Metrics m;
  m.support = labels.size();
  for (int c = 0; c < 2; ++c) {
    const double tp = cm[c][c];
    const double support = cm[c][0] + cm[c][1];
    const double predicted = cm[0][c] + cm[1][c];
    const double p = predicted > 0 ? tp / predicted : 0.0;
    const double r = support > 0 ? tp / support : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    const double w = support / n;
    m.precision += w * p;
    m.recall += w * r;
    m.f1 += w * f;
  }
  m.accuracy = (cm[0][0] + cm[1][1]) / n;
  m.precision *= 100;
  m.recall *= 100;
  m.f1 *= 100;
  m.accuracy *= 100;
  return m;
}

/// Per-task metrics and their unweighted mean over the tasks present.
struct MetricsReport {
  std::array<std::optional<Metrics>, kNumTasks> tasks{};
  Metrics aggregate;

  void finalize() {
    Metrics sum;
    std::size_t count = 0;
    for (const auto& m : tasks) {
      if (!m) continue;
      sum.precision += m->precision;
      sum.recall += m->recall;
      sum.f1 += m->f1;
      sum.accuracy += m->accuracy;
      sum.support += m->support;
      ++count;
    }
    if (count > 0) {
      sum.precision /= count;
      sum.recall /= count;
      sum.f1 /= count;
      sum.accuracy /= count;
    }
    aggregate = sum;
  }

  std::size_t task_count() const {
    std::size_t n = 0;
    for (const auto& m : tasks) n += m.has_value();
    return n;
  }
};

/// Thresholded predictions scored per task over the rows labeled for it.
inline MetricsReport evaluate(const Matrix& probabilities, const Matrix& labels, const Matrix& mask,
                              const ThresholdSet& thresholds) {
  const Eigen::MatrixXi pred = apply(probabilities, thresholds);
  MetricsReport report;
  for (TaskId t = 0; t < kNumTasks; ++t) {
    const auto c = static_cast<Eigen::Index>(t);
    std::vector<Label> p, y;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      if (mask(i, c) == 0.0) continue;
      p.push_back(static_cast<Label>(pred(i, c)));
      y.push_back(labels(i, c) > 0.5 ? 1 : 0);
    }
    if (!y.empty()) report.tasks[t] = weighted_metrics(p, y);
  }
  report.finalize();
  return report;
}

/// Monte Carlo random guessing: per task, evaluation labels and predictions are
/// drawn independently with the task's training prevalence; the report holds
/// the mean over trials.
inline MetricsReport random_baseline(const DatasetStats& st, std::size_t n_trials, std::uint64_t seed,
                                     std::size_t sample_size = 1000) {
  if (n_trials == 0 || sample_size == 0) throw ConfigError("random_baseline: need trials and samples");
  MetricsReport report;
  for (TaskId t = 0; t < kNumTasks; ++t) {
    const double p1 = st.tasks[t].class_balance[1];
    Rng rng(derive_seed(seed, "baseline", std::to_string(t)));
    Metrics mean;
    std::vector<Label> y(sample_size), g(sample_size);
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
      for (std::size_t i = 0; i < sample_size; ++i) {
        y[i] = bernoulli(rng, p1);
        g[i] = bernoulli(rng, p1);
      }
      const Metrics m = weighted_metrics(g, y);
      mean.precision += m.precision / n_trials;
      mean.recall += m.recall / n_trials;
      mean.f1 += m.f1 / n_trials;
      mean.accuracy += m.accuracy / n_trials;
    }
    mean.support = sample_size;
    report.tasks[t] = mean;
  }
  report.finalize();
  return report;
}

/// Multinomial naive Bayes over lowercased unigrams with add-one smoothing.
/// Tokens outside the training vocabulary are ignored.
class UnigramNaiveBayes {
 public:
  void fit(const std::vector<std::pair<std::string, Label>>& docs) {
    counts_ = {};
    totals_ = {0, 0};
    docs_ = {0, 0};
    vocabulary_.clear();
    for (const auto& [text, y] : docs) {
      ++docs_[y];
      for (const auto& tok : normalized_tokens(text)) {
        ++counts_[y][tok];
        ++totals_[y];
        vocabulary_.insert(tok);
      }
    }
    if (vocabulary_.empty()) throw DataError("naive Bayes: empty vocabulary");
  }

  /// log P(c) + sum_tokens log P(token | c), per class.
  std::array<double, 2> log_posterior(const std::string& text) const {
    const double n_docs = static_cast<double>(docs_[0] + docs_[1]);
    const double v = static_cast<double>(vocabulary_.size());
    std::array<double, 2> lp{};
    for (int c = 0; c < 2; ++c) {
      lp[c] = docs_[c] > 0 ? std::log(docs_[c] / n_docs) : -std::numeric_limits<double>::infinity();
    }
    for (const auto& tok : normalized_tokens(text)) {
      if (!vocabulary_.count(tok)) continue;
      for (int c = 0; c < 2; ++c) {
        const auto it = counts_[c].find(tok);
        const double count = it == counts_[c].end() ? 0.0 : it->second;
        lp[c] += std::log((count + 1.0) / (static_cast<double>(totals_[c]) + v));
      }
    }
    return lp;
  }

  Label predict(const std::string& text) const {
    const auto lp = log_posterior(text);
    return lp[1] > lp[0] ? 1 : 0;
  }

 private:
  std::array<std::unordered_map<std::string, std::size_t>, 2> counts_;
  std::array<std::size_t, 2> totals_{};
  std::array<std::size_t, 2> docs_{};
  std::set<std::string> vocabulary_;
};

inline MetricsReport unigram_nb_baseline(const std::vector<Record>& train,
                                         const std::vector<Record>& test) {
  const auto& reg = TaskRegistry::instance();
  if (test.empty()) throw DataError("naive Bayes baseline: empty test set");
  MetricsReport report;
  for (const auto& spec : reg.tasks()) {
    std::vector<std::pair<std::string, Label>> docs;
    for (const auto& r : train) {
      if (r.labels[spec.id]) docs.emplace_back(r.text, *r.labels[spec.id]);
    }
    if (docs.empty()) {
      throw DataError("naive Bayes baseline: no training records for " + std::string(spec.name));
    }
    UnigramNaiveBayes nb;
    nb.fit(docs);
    std::vector<Label> pred, y;
    for (const auto& r : test) {
      if (!r.labels[spec.id]) continue;
      pred.push_back(nb.predict(r.text));
      y.push_back(*r.labels[spec.id]);
    }
    if (!y.empty()) report.tasks[spec.id] = weighted_metrics(pred, y);
  }
  report.finalize();
  return report;
}

/// A prior result for one task and metric.
struct ReferenceRow {
  std::string task;  // task slug
  std::string citation;
  std::string metric;  // "F1" or "Acc."
  double previous = 0;
  std::optional<double> reported;
};

struct ComparisonRow {
  ReferenceRow reference;
  double value = 0;
  double absolute_gain = 0;
  double relative_gain = 0;
};

/// Absolute gain new - previous; relative gain 100 (new - previous) / previous.
inline ComparisonRow compare_values(const ReferenceRow& ref, double value) {
  if (ref.previous == 0) throw std::invalid_argument("compare: previous value is zero");
  return {ref, value, value - ref.previous, 100.0 * (value - ref.previous) / ref.previous};
}

/// Gains of a report against reference rows; the metric named by each row is
/// read from the report.
inline std::vector<ComparisonRow> compare(const MetricsReport& report,
                                          const std::vector<ReferenceRow>& reference) {
  const auto& reg = TaskRegistry::instance();
  std::vector<ComparisonRow> rows;
  for (const auto& ref : reference) {
    const auto id = reg.find_slug(ref.task);
    if (!id) throw DataError("compare: unknown task '" + ref.task + "'");
    const auto& m = report.tasks[*id];
    if (!m) throw DataError("compare: report has no metrics for " + ref.task);
    double value;
    if (ref.metric == "F1") {
      value = m->f1;
    } else if (ref.metric == "Acc.") {
      value = m->accuracy;
    } else {
      throw DataError("compare: metric mismatch, unknown metric '" + ref.metric + "'");
    }
    rows.push_back(compare_values(ref, value));
  }
  return rows;
}

/// Rounds to two decimals, as reference tables report them.
inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

/// Tab-separated reference table: task, citation, metric, previous[, reported].
/// Lines starting with '#' are comments.
inline std::vector<ReferenceRow> load_reference_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<ReferenceRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() < 4) throw DataError("reference table: short row '" + line + "'");
    ReferenceRow r{f[0], f[1], f[2], std::stod(f[3]), std::nullopt};
    if (f.size() > 4 && !f[4].empty()) r.reported = std::stod(f[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline nlohmann::ordered_json to_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"accuracy", m.accuracy}, {"support", m.support}};
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
  for (const auto& spec : TaskRegistry::instance().tasks()) {
    if (r.tasks[spec.id]) tasks[std::string(spec.slug)] = to_json(*r.tasks[spec.id]);
  }
  j["tasks"] = std::move(tasks);
  j["aggregate"] = to_json(r.aggregate);
  return j;
}

/// Aligned human-readable table.
inline std::string format_report(const MetricsReport& r, const std::string& title = "") {
  std::ostringstream out;
  char buf[200];
  if (!title.empty()) out << title << '\n';
  std::snprintf(buf, sizeof buf, "%-24s %8s %8s %8s %8s %8s\n", "Task", "Prec.", "Rec.", "F1", "Acc.",
                "Support");
  out << buf;
  for (const auto& spec : TaskRegistry::instance().tasks()) {
    const auto& m = r.tasks[spec.id];
    if (!m) continue;
    std::snprintf(buf, sizeof buf, "%-24s %8.2f %8.2f %8.2f %8.2f %8zu\n",
                  std::string(spec.name).c_str(), m->precision, m->recall, m->f1, m->accuracy,
                  m->support);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-24s %8.2f %8.2f %8.2f %8.2f\n", "Mean", r.aggregate.precision,
                r.aggregate.recall, r.aggregate.f1, r.aggregate.accuracy);
  out << buf;
  return out.str();
}

inline std::string format_comparison(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  char buf[240];
  std::snprintf(buf, sizeof buf, "%-24s %-20s %-6s %9s %9s %9s %9s\n", "Task", "Citation", "Metric",
                "Previous", "New", "Abs.Gain", "Rel.Gain");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %-20s %-6s %9.2f %9.2f %9.2f %9.2f\n",
                  r.reference.task.c_str(), r.reference.citation.c_str(), r.reference.metric.c_str(),
                  r.reference.previous, r.value, r.absolute_gain, r.relative_gain);
    out << buf;
  }
  return out.str();
}

}  // namespace mtlam

#endif  // MTLAM_EVAL_HPP_
