#ifndef MTLAM_DIAGNOSTICS_HPP_
#define MTLAM_DIAGNOSTICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtlam/common.hpp"
#include "mtlam/head.hpp"
#include "mtlam/record.hpp"
#include "mtlam/tasks.hpp"
#include "mtlam/train.hpp"

namespace mtlam {

enum class Layer { kEncoderOut, kShared, kTaskSpecific };

inline std::string_view to_string(Layer l) {
  switch (l) {
    case Layer::kEncoderOut: return "ENCODER_OUT";
    case Layer::kShared: return "SHARED";
    case Layer::kTaskSpecific: return "TASK_SPECIFIC";
  }
  return "?";
}

inline Layer parse_layer(std::string_view s) {
  for (Layer l : {Layer::kEncoderOut, Layer::kShared, Layer::kTaskSpecific}) {
    if (s == to_string(l)) return l;
  }
  throw ConfigError("unknown layer '" + std::string(s) + "'");
}

/// Rows of one layer's activations. ENCODER_OUT and SHARED have one row per
/// record, tagged by task type; TASK_SPECIFIC has one row per (record, task it
/// is labeled for), tagged by task slug.
struct RepresentationDump {
  Layer layer = Layer::kShared;
  Matrix matrix;
  std::vector<std::string> task_tags;
  std::uint64_t sample_seed = 0;
};

inline constexpr std::size_t kDefaultMaxPoints = 2000;

/// Picks min(max_points, n) record indices, allocated across task types in
/// proportion to their size (largest remainder) and sampled without
/// replacement inside each type. Depends only on the records and the seed, so
/// every layer sees the same sample.
inline std::vector<std::size_t> stratified_sample(const std::vector<Record>& records, std::size_t max_points,
                                                  std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumTaskTypes> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[index_of(records[i].task_type)].push_back(i);
  const std::size_t n = records.size();
  const std::size_t k = std::min(max_points, n);
  std::array<std::size_t, kNumTaskTypes> quota{};
  std::array<double, kNumTaskTypes> frac{};
  std::size_t given = 0;
  for (std::size_t g = 0; g < kNumTaskTypes; ++g) {
    const double exact = static_cast<double>(k) * static_cast<double>(groups[g].size()) / static_cast<double>(n);
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    frac[g] = exact - static_cast<double>(quota[g]);
    given += quota[g];
  }
  while (given < k) {
    std::size_t pick = kNumTaskTypes;
    for (std::size_t g = 0; g < kNumTaskTypes; ++g) {
      if (quota[g] >= groups[g].size()) continue;
      if (pick == kNumTaskTypes || frac[g] > frac[pick]) pick = g;
    }
    ++quota[pick];
    frac[pick] = -1;
    ++given;
  }
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < kNumTaskTypes; ++g) {
    Rng rng(derive_seed(seed, "diagnostics-sample", std::to_string(g)));
    for (std::size_t j : sample_without_replacement(rng, groups[g].size(), quota[g])) {
      out.push_back(groups[g][j]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// EVAL-mode activations of `layer` on a stratified sample of `records`.
inline RepresentationDump extract(const Model& model, const std::vector<Record>& records, Layer layer,
                                  std::size_t max_points = kDefaultMaxPoints, std::uint64_t seed = 0) {
  if (records.empty()) throw DataError("extract: no records");
  const auto& reg = TaskRegistry::instance();
  const auto idx = stratified_sample(records, max_points, seed);
  std::vector<std::string> texts;
  for (std::size_t i : idx) texts.push_back(records[i].text);
  const auto trace = forward(model.encoder->encode(texts), model.head, Mode::kEval);

  RepresentationDump dump;
  dump.layer = layer;
  dump.sample_seed = seed;
  switch (layer) {
    case Layer::kEncoderOut:
    case Layer::kShared:
      dump.matrix = layer == Layer::kEncoderOut ? trace.encoder_out : trace.shared_repr;
      for (std::size_t i : idx) dump.task_tags.emplace_back(to_string(records[i].task_type));
      break;
    case Layer::kTaskSpecific: {
      std::vector<std::pair<Eigen::Index, TaskId>> rows;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (TaskId t = 0; t < kNumTasks; ++t) {
          if (records[idx[r]].labels[t]) rows.emplace_back(static_cast<Eigen::Index>(r), t);
        }
      }
      dump.matrix.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(model.head.config.hidden_width));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        dump.matrix.row(static_cast<Eigen::Index>(k)) = trace.task_repr[rows[k].second].row(rows[k].first);
        dump.task_tags.emplace_back(reg.task(rows[k].second).slug);
      }
      break;
    }
    default:
      throw ConfigError("extract: unknown layer");
  }
  return dump;
}

/// Tab-separated text: a '#' header line with the layer, shape and seed, then
/// one line per row with the tag first.
inline void write_dump(std::ostream& out, const RepresentationDump& d) {
  out << "# layer=" << to_string(d.layer) << " rows=" << d.matrix.rows() << " cols=" << d.matrix.cols()
      << " sample_seed=" << d.sample_seed << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < d.matrix.rows(); ++i) {
    out << d.task_tags[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d.matrix.cols(); ++j) out << '\t' << d.matrix(i, j);
    out << '\n';
  }
}

inline RepresentationDump read_dump(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("# ", 0) != 0) throw DataError("dump: missing header");
  RepresentationDump d;
  std::istringstream hs(header.substr(2));
  std::string field;
  Eigen::Index rows = -1, cols = -1;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw DataError("dump: bad header field " + field);
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "layer") d.layer = parse_layer(value);
    else if (key == "rows") rows = std::stol(value);
    else if (key == "cols") cols = std::stol(value);
    else if (key == "sample_seed") d.sample_seed = std::stoull(value);
    else throw DataError("dump: unknown header field " + key);
  }
  if (rows < 0 || cols < 0) throw DataError("dump: header lacks shape");
  d.matrix.resize(rows, cols);
  std::string line;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw DataError("dump: truncated at row " + std::to_string(i));
    std::istringstream ls(line);
    std::string tag;
    std::getline(ls, tag, '\t');
    d.task_tags.push_back(tag);
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(ls >> d.matrix(i, j))) throw DataError("dump: short row " + std::to_string(i));
    }
  }
  return d;
}

struct TsneConfig {
  double perplexity = 30;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200;
  double early_exaggeration = 12;
  std::size_t exaggeration_iterations = 250;
};

namespace detail {

inline Matrix squared_distances(const Matrix& x) {
  const Vector norms = x.rowwise().squaredNorm();
  Matrix d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  return d.cwiseMax(0.0);
}

// Row-conditional affinities whose entropy matches log(perplexity), found by
// bisection on the Gaussian precision.
inline Matrix conditional_affinities(const Matrix& d2, double perplexity) {
  const Eigen::Index n = d2.rows();
  const double target = std::log(perplexity);
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double min_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) if (j != i) min_d = std::min(min_d, d2(i, j));
    for (int it = 0; it < 200; ++it) {
      double sum = 0, weighted = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (d2(i, j) - min_d));
        p(i, j) = w;
        sum += w;
        weighted += w * (d2(i, j) - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  return p;
}

}  // namespace detail

/// Exact t-SNE (O(n^2) per iteration) with early exaggeration, momentum and
/// per-coordinate gains.
inline Matrix tsne_project(const Matrix& x, const TsneConfig& cfg = {}) {
  const Eigen::Index n = x.rows();
  if (!(cfg.perplexity > 0)) throw ConfigError("t-SNE: perplexity must be positive");
  if (static_cast<double>(n) <= 3.0 * cfg.perplexity) {
    throw DataError("t-SNE: need more than 3 * perplexity points, got " + std::to_string(n));
  }
  Matrix p = detail::conditional_affinities(detail::squared_distances(x), cfg.perplexity);
  p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();

  Rng rng(derive_seed(cfg.seed, "tsne"));
  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) for (int c = 0; c < 2; ++c) y(i, c) = 1e-4 * standard_normal(rng);
  Matrix velocity = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix q(n, n);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    // The second phase starts from a fresh optimizer state; gains grown under
    // exaggeration would otherwise overshoot once the attraction drops.
    if (it == cfg.exaggeration_iterations) {
      velocity.setZero();
      gains.setOnes();
    }
    const double exaggeration = it < cfg.exaggeration_iterations ? cfg.early_exaggeration : 1.0;
    const double momentum = it < cfg.exaggeration_iterations ? 0.5 : 0.8;
    q = (1.0 + detail::squared_distances(y).array()).inverse().matrix();
    q.diagonal().setZero();
    const double z = q.sum();
    // dC/dy_i = 4 sum_j (e*p_ij - q_ij/z) * q_ij * (y_i - y_j)
    const Matrix stiffness = ((exaggeration * p).array() - q.array() / z).cwiseProduct(q.array()).matrix();
    const Vector row_sums = stiffness.rowwise().sum();
    const Matrix grad = 4.0 * (row_sums.asDiagonal() * y - stiffness * y);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0) == (velocity(i, c) > 0);
        gains(i, c) = std::max(0.01, same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
        velocity(i, c) = momentum * velocity(i, c) - cfg.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += velocity(i, c);
      }
    }
    const RowVector center = y.colwise().mean();
    y.rowwise() -= center;
  }
  return y;
}

/// Mean silhouette coefficient of a labeled point set under Euclidean distance.
/// Points alone in their cluster score 0.
inline double silhouette(const Matrix& points, std::span<const int> clusters) {
  const Eigen::Index n = points.rows();
  if (static_cast<std::size_t>(n) != clusters.size()) throw std::invalid_argument("silhouette: size mismatch");
  std::map<int, std::size_t> sizes;
  for (int c : clusters) ++sizes[c];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: need at least two clusters");
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<int, double> sum;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) sum[clusters[static_cast<std::size_t>(j)]] += (points.row(i) - points.row(j)).norm();
    }
    const int own = clusters[static_cast<std::size_t>(i)];
    if (sizes[own] == 1) continue;
    const double a = sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [c, s] : sum) if (c != own) b = std::min(b, s / static_cast<double>(sizes[c]));
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

namespace detail {

inline std::string plot_color(std::size_t i) {
  static constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  if (i < kPalette.size()) return kPalette[i];
  std::ostringstream s;
  s << "hsl(" << (i * 137) % 360 << ",65%,45%)";
  return s.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// SVG scatter plot, one color per distinct tag (in order of first
/// appearance) and a legend entry for each. Returns the number of legend
/// entries.
inline std::size_t emit_plot(const Matrix& points, const std::vector<std::string>& tags, const std::string& path,
                             const std::string& title = "") {
  if (points.rows() == 0) throw std::invalid_argument("emit_plot: no points");
  if (points.cols() != 2 || static_cast<std::size_t>(points.rows()) != tags.size()) {
    throw std::invalid_argument("emit_plot: points must be n x 2 and aligned with tags");
  }
  std::vector<std::string> legend;
  std::map<std::string, std::size_t> color_of;
  for (const auto& t : tags) {
    if (color_of.emplace(t, legend.size()).second) legend.push_back(t);
  }

  constexpr double kSize = 600, kMargin = 20, kLegendWidth = 180;
  const Eigen::RowVector2d lo = points.colwise().minCoeff();
  const Eigen::RowVector2d hi = points.colwise().maxCoeff();
  const auto scale = [&](double v, int c) {
    const double span = hi(c) - lo(c);
    const double u = span > 0 ? (v - lo(c)) / span : 0.5;
    return kMargin + u * (kSize - 2 * kMargin);
  };

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + kLegendWidth << "\" height=\"" << kSize
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) {
    svg << "<text x=\"" << kMargin << "\" y=\"14\" font-size=\"12\">" << detail::xml_escape(title) << "</text>\n";
  }
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    svg << "<circle cx=\"" << scale(points(i, 0), 0) << "\" cy=\"" << kSize - scale(points(i, 1), 1)
        << "\" r=\"2.5\" fill=\"" << detail::plot_color(color_of[tags[static_cast<std::size_t>(i)]])
        << "\" fill-opacity=\"0.7\"/>\n";
  }
  svg << "<g class=\"legend\">\n";
  for (std::size_t k = 0; k < legend.size(); ++k) {
    const double y = kMargin + 18.0 * static_cast<double>(k);
    svg << "<rect x=\"" << kSize + 5 << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\""
        << detail::plot_color(k) << "\"/><text x=\"" << kSize + 20 << "\" y=\"" << y + 9
        << "\" font-size=\"11\">" << detail::xml_escape(legend[k]) << "</text>\n";
  }
  svg << "</g>\n</svg>\n";

  std::ofstream out(path);
  if (!out) throw DataError("cannot write plot " + path);
  out << svg.str();
  if (!out.flush()) throw DataError("failed writing plot " + path);
  return legend.size();
}

inline constexpr std::array<double, 4> kProfileFractions = {0.05, 0.10, 0.20, 0.40};

struct ProfileRow {
  double data_fraction = 0;
  double wall_seconds = 0;
  std::uint64_t peak_memory_bytes = 0;
  std::string model_variant;
  std::optional<std::string> error;
};

struct ProfileConfig {
  EncoderConfig encoder;
  HeadConfig head;
  TrainConfig train;
  /// Each measurement is repeated and the fastest kept, which damps
  /// scheduler noise without hiding real cost.
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
};

namespace detail {

// One epoch of training on `records`, timing only the optimization itself.
inline std::pair<double, std::uint64_t> timed_epoch(const ProfileConfig& cfg, const std::vector<Record>& records,
                                                    std::optional<TaskId> only_task) {
  TrainConfig tc = cfg.train;
  tc.max_epochs = 1;
  Model model = make_model(cfg.encoder, cfg.head, cfg.seed);
  TrainOptions opts;
  opts.only_task = only_task;
  opts.validate = false;
  const TrainResult r = train(model, records, {}, LossWeights{}, tc, opts);
  if (r.diverged) throw std::runtime_error(r.diagnostic);
  return {r.history.wall_seconds, r.history.peak_memory_bytes};
}

}  // namespace detail

/// Wall time and peak memory of one training epoch per variant and data
/// fraction. "multi_task" trains one model on everything; "single_task"
/// trains one model per task on that task's records alone and reports the
/// summed time and the largest peak. Fractions are nested prefixes of one
/// seeded permutation.
inline std::vector<ProfileRow> profile(const std::vector<std::string>& variants, const std::vector<Record>& data,
                                       std::span<const double> fractions, const ProfileConfig& cfg) {
  for (double f : fractions) {
    if (std::find(kProfileFractions.begin(), kProfileFractions.end(), f) == kProfileFractions.end()) {
      throw ConfigError("profile: fraction " + std::to_string(f) + " not in {0.05, 0.10, 0.20, 0.40}");
    }
  }
  if (data.empty()) throw DataError("profile: no records");
  if (cfg.repeats == 0) throw ConfigError("profile: repeats must be positive");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(cfg.seed, "profile"));
  shuffle(order, rng);

  std::vector<ProfileRow> rows;
  for (const auto& variant : variants) {
    for (double f : fractions) {
      ProfileRow row{f, 0, 0, variant, std::nullopt};
      try {
        const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(data.size()))));
        std::vector<Record> subset;
        for (std::size_t i = 0; i < k; ++i) subset.push_back(data[order[i]]);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
          double seconds = 0;
          std::uint64_t peak = 0;
          if (variant == "multi_task") {
            std::tie(seconds, peak) = detail::timed_epoch(cfg, subset, std::nullopt);
          } else if (variant == "single_task") {
            for (TaskId t = 0; t < kNumTasks; ++t) {
              const bool any = std::any_of(subset.begin(), subset.end(), [&](const Record& r) { return r.labels[t].has_value(); });
              if (!any) continue;
              const auto [s, p] = detail::timed_epoch(cfg, subset, t);
              seconds += s;
              peak = std::max(peak, p);
            }
          } else {
            throw ConfigError("profile: unknown variant '" + variant + "'");
          }
          best = std::min(best, seconds);
          row.peak_memory_bytes = std::max(row.peak_memory_bytes, peak);
        }
        row.wall_seconds = best;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline void write_profile(std::ostream& out, const std::vector<ProfileRow>& rows) {
  out << "model_variant\tdata_fraction\twall_seconds\tpeak_memory_bytes\terror\n";
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << r.model_variant << '\t' << r.data_fraction << '\t' << r.wall_seconds << '\t' << r.peak_memory_bytes
        << '\t' << r.error.value_or("") << '\n';
  }
}

}  // namespace mtlam

#endif  // MTLAM_DIAGNOSTICS_HPP_
