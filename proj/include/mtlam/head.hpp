#ifndef MTLAM_HEAD_HPP_
#define MTLAM_HEAD_HPP_

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtlam/common.hpp"
#include "mtlam/encoder.hpp"
#include "mtlam/tasks.hpp"

namespace mtlam {

enum class SizePreset { kSmall, kMedium, kLarge };

inline std::string_view to_string(SizePreset p) {
  switch (p) {
    case SizePreset::kSmall: return "SMALL";
    case SizePreset::kMedium: return "MEDIUM";
    case SizePreset::kLarge: return "LARGE";
  }
  return "?";
}

inline SizePreset parse_size_preset(std::string_view s) {
  for (auto p : {SizePreset::kSmall, SizePreset::kMedium, SizePreset::kLarge}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown size preset '" + std::string(s) + "'");
}

/// Uniform hidden width of each preset. With a 128-wide input these give
/// 17,121, 271,821 and 437,871 head parameters.
inline std::size_t preset_width(SizePreset p) {
  switch (p) {
    case SizePreset::kSmall: return 22;
    case SizePreset::kMedium: return 97;
    case SizePreset::kLarge: return 124;
  }
  return 0;
}

struct HeadConfig {
  std::size_t input_dim = 128;
  std::size_t hidden_width = 22;
  double dropout_rate = 0.40;

  void check() const {
    if (input_dim == 0) throw ConfigError("head: input_dim must be positive");
    if (hidden_width == 0) throw ConfigError("head: hidden_width must be >= 1");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) {
      throw ConfigError("head: dropout_rate must be in [0, 1)");
    }
  }

  bool operator==(const HeadConfig&) const = default;
};

/// One dense layer inside the flat parameter vector: an in x out column-major
/// weight matrix followed by `out` biases.
struct DenseSlot {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t offset = 0;

  std::size_t size() const { return in * out + out; }
};

/// Where every layer of the head lives in the flat parameter vector.
///
/// Order: shared encoder (2 layers), task-type branches (3 x 2), task-specific
/// branches (10 x 2), output layers (10; width 18 for propaganda, 1 otherwise).
struct HeadLayout {
  std::array<DenseSlot, 2> shared;
  std::array<std::array<DenseSlot, 2>, kNumTaskTypes> type_branch;
  std::array<std::array<DenseSlot, 2>, kNumTasks> task_branch;
  std::array<DenseSlot, kNumTasks> output;
  std::size_t total = 0;

  explicit HeadLayout(const HeadConfig& cfg) {
    cfg.check();
    const std::size_t h = cfg.hidden_width;
    const auto place = [&](std::size_t in, std::size_t out) {
      DenseSlot s{in, out, total};
      total += s.size();
      return s;
    };
    shared = {place(cfg.input_dim, h), place(h, h)};
    for (auto& b : type_branch) b = {place(h, h), place(h, h)};
    for (auto& b : task_branch) b = {place(h, h), place(h, h)};
    for (const auto& spec : TaskRegistry::instance().tasks()) {
      output[spec.id] = place(h, spec.raw_slot_count);
    }
  }
};

/// Exact number of head parameters. For input width d and hidden width h this
/// is 27h^2 + (d + 55)h + 27.
inline std::size_t param_count(const HeadConfig& cfg) { return HeadLayout(cfg).total; }

struct HeadParams {
  HeadConfig config;
  std::vector<double> values;

  bool operator==(const HeadParams&) const = default;
};

/// He-uniform weights, U(-sqrt(6/in), sqrt(6/in)), for the ReLU layers and
/// U(-1/sqrt(in), 1/sqrt(in)) for the output layers; biases zero.
inline HeadParams init_head(const HeadConfig& cfg, Rng& rng) {
  const HeadLayout layout(cfg);
  HeadParams p{cfg, std::vector<double>(layout.total, 0.0)};
  const auto fill = [&](const DenseSlot& s, double gain) {
    const double a = std::sqrt(gain / static_cast<double>(s.in));
    for (std::size_t i = 0; i < s.in * s.out; ++i) p.values[s.offset + i] = uniform(rng, -a, a);
  };
  for (const auto& s : layout.shared) fill(s, 6.0);
  for (const auto& b : layout.type_branch) for (const auto& s : b) fill(s, 6.0);
  for (const auto& b : layout.task_branch) for (const auto& s : b) fill(s, 6.0);
  for (const auto& s : layout.output) fill(s, 1.0);
  return p;
}

/// Max-pooling of the propaganda technique probabilities.
inline double max_pool_propaganda(std::span<const double> technique_probs) {
  if (technique_probs.size() != kNumTechniques) {
    throw std::invalid_argument("max_pool_propaganda: expected 18 technique probabilities, got " +
                                std::to_string(technique_probs.size()));
  }
  return *std::max_element(technique_probs.begin(), technique_probs.end());
}

/// Activations recorded by one forward pass. Representations are the outputs
/// of the last dense layer of each block (after ReLU and dropout).
struct ForwardTrace {
  Matrix encoder_out;
  Matrix shared_repr;
  std::array<Matrix, kNumTaskTypes> type_repr;
  std::array<Matrix, kNumTasks> task_repr;
  /// batch x 27 pre-sigmoid outputs.
  Matrix raw_logits;
  /// batch x 10; the propaganda column is pooled over its 18 technique slots.
  Matrix probabilities;
  /// Per row, the pooled propaganda logit and the technique slot that won.
  Vector pooled_logit;
  std::vector<Eigen::Index> pooled_argmax;
};

/// Intermediates needed by `backward`, one entry per hidden layer.
struct HeadCache {
  struct Hidden {
    Matrix input;
    Matrix pre_activation;
    Matrix dropout_scale;  // empty in EVAL mode
  };
  std::array<Hidden, 2> shared;
  std::array<std::array<Hidden, 2>, kNumTaskTypes> type_branch;
  std::array<std::array<Hidden, 2>, kNumTasks> task_branch;
};

namespace detail {

inline Eigen::Map<const Matrix> weights(const HeadParams& p, const DenseSlot& s) {
  return {p.values.data() + s.offset, static_cast<Eigen::Index>(s.in),
          static_cast<Eigen::Index>(s.out)};
}

inline Eigen::Map<const RowVector> bias(const HeadParams& p, const DenseSlot& s) {
  return {p.values.data() + s.offset + s.in * s.out, static_cast<Eigen::Index>(s.out)};
}

inline Matrix affine(const Matrix& x, const HeadParams& p, const DenseSlot& s) {
  Matrix y = x * weights(p, s);
  y.rowwise() += bias(p, s);
  return y;
}

// Dense -> ReLU -> dropout (inverted scaling, TRAIN only).
inline Matrix hidden_layer(const Matrix& x, const HeadParams& p, const DenseSlot& s, Mode mode,
                           double rate, Rng* rng, HeadCache::Hidden* cache) {
  Matrix pre = affine(x, p, s);
  Matrix out = pre.cwiseMax(0.0);
  Matrix scale;
  if (mode == Mode::kTrain && rate > 0) {
    if (!rng) throw std::invalid_argument("forward: TRAIN mode with dropout needs an rng");
    scale.resize(out.rows(), out.cols());
    const double keep = 1.0 / (1.0 - rate);
    for (Eigen::Index j = 0; j < scale.cols(); ++j) {
      for (Eigen::Index i = 0; i < scale.rows(); ++i) {
        scale(i, j) = bernoulli(*rng, rate) ? 0.0 : keep;
      }
    }
    out.array() *= scale.array();
  }
  if (cache) {
    cache->input = x;
    cache->pre_activation = std::move(pre);
    cache->dropout_scale = std::move(scale);
  }
  return out;
}

}  // namespace detail

/// Runs the head on a batch of embeddings (batch x input_dim).
inline ForwardTrace forward(const Matrix& embeddings, const HeadParams& params, Mode mode,
                            Rng* dropout_rng = nullptr, HeadCache* cache = nullptr) {
  const HeadLayout layout(params.config);
  if (params.values.size() != layout.total) throw std::invalid_argument("forward: bad parameter size");
  if (embeddings.cols() != static_cast<Eigen::Index>(params.config.input_dim)) {
    throw std::invalid_argument("forward: embedding width " + std::to_string(embeddings.cols()) +
                                " != input_dim " + std::to_string(params.config.input_dim));
  }
  if (!embeddings.allFinite()) throw DataError("forward: non-finite embedding");
  const double rate = params.config.dropout_rate;
  const auto& reg = TaskRegistry::instance();
  const Eigen::Index n = embeddings.rows();

  ForwardTrace tr;
  tr.encoder_out = embeddings;
  Matrix x = detail::hidden_layer(embeddings, params, layout.shared[0], mode, rate, dropout_rng,
                                  cache ? &cache->shared[0] : nullptr);
  tr.shared_repr = detail::hidden_layer(x, params, layout.shared[1], mode, rate, dropout_rng,
                                        cache ? &cache->shared[1] : nullptr);
  for (std::size_t k = 0; k < kNumTaskTypes; ++k) {
    Matrix y = detail::hidden_layer(tr.shared_repr, params, layout.type_branch[k][0], mode, rate,
                                    dropout_rng, cache ? &cache->type_branch[k][0] : nullptr);
    tr.type_repr[k] = detail::hidden_layer(y, params, layout.type_branch[k][1], mode, rate,
                                           dropout_rng, cache ? &cache->type_branch[k][1] : nullptr);
  }
  tr.raw_logits.resize(n, kNumRawSlots);
  tr.probabilities.resize(n, kNumTasks);
  tr.pooled_logit.resize(n);
  tr.pooled_argmax.assign(static_cast<std::size_t>(n), 0);
  for (const auto& spec : reg.tasks()) {
    const std::size_t k = index_of(spec.type);
    Matrix y = detail::hidden_layer(tr.type_repr[k], params, layout.task_branch[spec.id][0], mode,
                                    rate, dropout_rng,
                                    cache ? &cache->task_branch[spec.id][0] : nullptr);
    tr.task_repr[spec.id] =
        detail::hidden_layer(y, params, layout.task_branch[spec.id][1], mode, rate, dropout_rng,
                             cache ? &cache->task_branch[spec.id][1] : nullptr);
    const Matrix z = detail::affine(tr.task_repr[spec.id], params, layout.output[spec.id]);
    tr.raw_logits.middleCols(static_cast<Eigen::Index>(spec.raw_slot_offset),
                             static_cast<Eigen::Index>(spec.raw_slot_count)) = z;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index arg = 0;
      const double zmax = z.row(i).maxCoeff(&arg);
      // max commutes with the monotone sigmoid, so pooling the logits and
      // pooling the probabilities select the same slot.
      tr.probabilities(i, static_cast<Eigen::Index>(spec.id)) = sigmoid(zmax);
      if (spec.id == reg.propaganda_task()) {
        tr.pooled_logit(i) = zmax;
        tr.pooled_argmax[static_cast<std::size_t>(i)] = arg;
      }
    }
  }
  return tr;
}

namespace detail {

inline Matrix backward_affine(const Matrix& x, const Matrix& d_out, const HeadParams& p,
                              const DenseSlot& s, std::span<double> grad) {
  Eigen::Map<Matrix> dw(grad.data() + s.offset, static_cast<Eigen::Index>(s.in),
                        static_cast<Eigen::Index>(s.out));
  Eigen::Map<RowVector> db(grad.data() + s.offset + s.in * s.out, static_cast<Eigen::Index>(s.out));
  dw.noalias() += x.transpose() * d_out;
  db += d_out.colwise().sum();
  return d_out * weights(p, s).transpose();
}

inline Matrix backward_hidden(const HeadCache::Hidden& c, Matrix d_out, const HeadParams& p,
                              const DenseSlot& s, std::span<double> grad) {
  if (c.dropout_scale.size() > 0) d_out.array() *= c.dropout_scale.array();
  d_out.array() *= (c.pre_activation.array() > 0.0).cast<double>();
  return backward_affine(c.input, d_out, p, s, grad);
}

}  // namespace detail

/// Back-propagates dLoss/dprobabilities (batch x 10) through the head. Adds the
/// parameter gradient into `grad` and returns dLoss/dembeddings.
inline Matrix backward(const HeadParams& params, const ForwardTrace& trace, const HeadCache& cache,
                       const Matrix& d_probabilities, std::span<double> grad) {
  const HeadLayout layout(params.config);
  if (grad.size() != layout.total) throw std::invalid_argument("backward: bad gradient size");
  const auto& reg = TaskRegistry::instance();
  const Eigen::Index n = trace.probabilities.rows();
  if (d_probabilities.rows() != n || d_probabilities.cols() != static_cast<Eigen::Index>(kNumTasks)) {
    throw std::invalid_argument("backward: gradient shape mismatch");
  }
  const Eigen::Index h = static_cast<Eigen::Index>(params.config.hidden_width);

  std::array<Matrix, kNumTaskTypes> d_type;
  for (auto& m : d_type) m = Matrix::Zero(n, h);
  for (const auto& spec : reg.tasks()) {
    const auto t = static_cast<Eigen::Index>(spec.id);
    Matrix dz = Matrix::Zero(n, static_cast<Eigen::Index>(spec.raw_slot_count));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = trace.probabilities(i, t);
      const Eigen::Index slot =
          spec.id == reg.propaganda_task() ? trace.pooled_argmax[static_cast<std::size_t>(i)] : 0;
      dz(i, slot) = d_probabilities(i, t) * p * (1.0 - p);
    }
    Matrix d = detail::backward_affine(trace.task_repr[spec.id], dz, params,
                                       layout.output[spec.id], grad);
    d = detail::backward_hidden(cache.task_branch[spec.id][1], std::move(d), params,
                                layout.task_branch[spec.id][1], grad);
    d = detail::backward_hidden(cache.task_branch[spec.id][0], std::move(d), params,
                                layout.task_branch[spec.id][0], grad);
    d_type[index_of(spec.type)] += d;
  }
  Matrix d_shared = Matrix::Zero(n, h);
  for (std::size_t k = 0; k < kNumTaskTypes; ++k) {
    Matrix d = detail::backward_hidden(cache.type_branch[k][1], std::move(d_type[k]), params,
                                       layout.type_branch[k][1], grad);
    d_shared += detail::backward_hidden(cache.type_branch[k][0], std::move(d), params,
                                        layout.type_branch[k][0], grad);
  }
  Matrix d = detail::backward_hidden(cache.shared[1], std::move(d_shared), params, layout.shared[1], grad);
  return detail::backward_hidden(cache.shared[0], std::move(d), params, layout.shared[0], grad);
}

}  // namespace mtlam

#endif  // MTLAM_HEAD_HPP_
