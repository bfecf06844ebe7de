#ifndef MTLAM_ENCODER_HPP_
#define MTLAM_ENCODER_HPP_

#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtlam/common.hpp"
#include "mtlam/text.hpp"

namespace mtlam {

enum class Mode { kTrain, kEval };

enum class EncoderKind {
  kPretrainedSmallBert,
  kPretrainedSmallElectra,
  kPretrainedBaseAlbert,
  kHashedBow,
};

inline std::string_view to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::kPretrainedSmallBert: return "PRETRAINED_SMALL_BERT";
    case EncoderKind::kPretrainedSmallElectra: return "PRETRAINED_SMALL_ELECTRA";
    case EncoderKind::kPretrainedBaseAlbert: return "PRETRAINED_BASE_ALBERT";
    case EncoderKind::kHashedBow: return "HASHED_BOW";
  }
  return "?";
}

inline EncoderKind parse_encoder_kind(std::string_view s) {
  for (auto k : {EncoderKind::kPretrainedSmallBert, EncoderKind::kPretrainedSmallElectra,
                 EncoderKind::kPretrainedBaseAlbert, EncoderKind::kHashedBow}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown encoder kind '" + std::string(s) + "'");
}

/// Output width of each encoder family's sequence summary.
inline std::size_t default_embedding_dim(EncoderKind k) {
  switch (k) {
    case EncoderKind::kPretrainedSmallBert: return 128;
    case EncoderKind::kPretrainedSmallElectra: return 256;
    case EncoderKind::kPretrainedBaseAlbert: return 768;
    case EncoderKind::kHashedBow: return 128;
  }
  return 0;
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kHashedBow;
  std::size_t embedding_dim = 128;
  std::size_t max_sequence_length = 128;
  std::size_t vocabulary_hash_buckets = 4096;
  /// Pretrained kinds: exported sentence embeddings (see PrecomputedEncoder).
  std::string weights_path;
  std::uint64_t seed = 0;
};

/// Text encoder seen by the head and the training loop.
///
/// `encode` is a pure function of the parameters. Trainable encoders expose a
/// flat parameter view for the optimizer and accumulate gradients into a
/// buffer with the same layout.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;

  virtual std::size_t embedding_dim() const = 0;
  virtual Matrix encode(std::span<const std::string> texts) const = 0;

  virtual bool trainable() const { return false; }
  virtual std::span<double> parameters() { return {}; }
  virtual std::span<const double> parameters() const { return {}; }
  virtual void accumulate_gradient(std::span<const std::string> /*texts*/,
                                   const Matrix& /*d_embedding*/,
                                   std::span<double> /*grad*/) const {}

  virtual std::unique_ptr<TextEncoder> clone() const = 0;
  virtual const EncoderConfig& config() const = 0;

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

 protected:
  Mode mode_ = Mode::kEval;
};

/// Sparse bucket-count vector of one text.
struct SparseFeatures {
  std::vector<std::pair<std::size_t, double>> entries;
};

/// Hashed bag-of-words encoder: lowercased tokens are hashed into buckets, the
/// bucket counts are scaled by 1/sqrt(token count) and mapped to the embedding
/// by a trainable affine projection.
///
/// Parameter layout: projection (buckets x dim, row-major) then bias (dim).
class HashedBowEncoder final : public TextEncoder {
 public:
  explicit HashedBowEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.embedding_dim == 0 || cfg_.vocabulary_hash_buckets == 0 ||
        cfg_.max_sequence_length == 0) {
      throw ConfigError("HASHED_BOW: dimensions must be positive");
    }
    params_.resize(buckets() * dim() + dim());
    Rng rng(derive_seed(cfg_.seed, "init", "encoder"));
    // Unit-variance embedding coordinates for a typical text.
    const double a = std::sqrt(3.0);
    for (std::size_t i = 0; i < buckets() * dim(); ++i) params_[i] = uniform(rng, -a, a);
  }

  std::size_t embedding_dim() const override { return dim(); }
  std::size_t buckets() const { return cfg_.vocabulary_hash_buckets; }

  SparseFeatures features(std::string_view text) const {
    auto tokens = normalized_tokens(text);
    if (tokens.size() > cfg_.max_sequence_length) tokens.resize(cfg_.max_sequence_length);
    SparseFeatures f;
    if (tokens.empty()) return f;
    std::unordered_map<std::size_t, double> counts;
    for (const auto& t : tokens) counts[fnv1a(t) % buckets()] += 1.0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.size()));
    f.entries.assign(counts.begin(), counts.end());
    std::sort(f.entries.begin(), f.entries.end());
    for (auto& e : f.entries) e.second *= scale;
    return f;
  }

  Matrix encode(std::span<const std::string> texts) const override {
    if (texts.empty()) throw DataError("encode: empty batch");
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::Map<const Matrix> bias(params_.data() + buckets() * dim(), 1, d);
    Matrix out(static_cast<Eigen::Index>(texts.size()), d);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      RowVector row = bias;
      for (const auto& [b, x] : features(texts[i]).entries) {
        row += x * Eigen::Map<const RowVector>(params_.data() + b * dim(), d);
      }
      out.row(static_cast<Eigen::Index>(i)) = row;
    }
    return out;
  }

  bool trainable() const override { return true; }
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }

  void accumulate_gradient(std::span<const std::string> texts, const Matrix& d_embedding,
                           std::span<double> grad) const override {
    const auto d = static_cast<Eigen::Index>(dim());
    if (grad.size() != params_.size() || d_embedding.cols() != d ||
        d_embedding.rows() != static_cast<Eigen::Index>(texts.size())) {
      throw std::invalid_argument("HASHED_BOW: gradient shape mismatch");
    }
    Eigen::Map<RowVector> d_bias(grad.data() + buckets() * dim(), d);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto row = d_embedding.row(static_cast<Eigen::Index>(i));
      d_bias += row;
      for (const auto& [b, x] : features(texts[i]).entries) {
        Eigen::Map<RowVector>(grad.data() + b * dim(), d) += x * row;
      }
    }
  }

  std::unique_ptr<TextEncoder> clone() const override {
    return std::make_unique<HashedBowEncoder>(*this);
  }
  const EncoderConfig& config() const override { return cfg_; }

 private:
  std::size_t dim() const { return cfg_.embedding_dim; }

  EncoderConfig cfg_;
  std::vector<double> params_;
};

/// Frozen sentence embeddings exported from a pretrained encoder family.
///
/// The weights file is JSON Lines, one `{"text": ..., "embedding": [...]}`
/// object per line, produced offline by running the encoder over the corpus
/// (tools/export_embeddings.py). Texts are looked up verbatim.
class PrecomputedEncoder final : public TextEncoder {
 public:
  explicit PrecomputedEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
    std::ifstream in(cfg_.weights_path);
    if (!in) {
      throw ConfigError("missing weights for " + std::string(to_string(cfg_.kind)) + ": " +
                        cfg_.weights_path);
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        auto v = j.at("embedding").get<std::vector<double>>();
        if (v.size() != cfg_.embedding_dim) {
          throw DataError("embedding width " + std::to_string(v.size()) + ", expected " +
                          std::to_string(cfg_.embedding_dim));
        }
        table_[j.at("text").get<std::string>()] = std::move(v);
      } catch (const nlohmann::json::exception& e) {
        throw DataError(cfg_.weights_path + " line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::size_t embedding_dim() const override { return cfg_.embedding_dim; }

  Matrix encode(std::span<const std::string> texts) const override {
    if (texts.empty()) throw DataError("encode: empty batch");
    Matrix out(static_cast<Eigen::Index>(texts.size()),
               static_cast<Eigen::Index>(cfg_.embedding_dim));
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const auto it = table_.find(texts[i]);
      if (it == table_.end()) throw DataError("no exported embedding for text: " + texts[i]);
      out.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const RowVector>(it->second.data(), out.cols());
    }
    return out;
  }

  std::unique_ptr<TextEncoder> clone() const override {
    return std::make_unique<PrecomputedEncoder>(*this);
  }
  const EncoderConfig& config() const override { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

inline std::unique_ptr<TextEncoder> load_encoder(const EncoderConfig& cfg) {
  if (cfg.embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (cfg.kind == EncoderKind::kHashedBow) return std::make_unique<HashedBowEncoder>(cfg);
  if (cfg.weights_path.empty() || !std::filesystem::exists(cfg.weights_path)) {
    throw ConfigError("missing weights for " + std::string(to_string(cfg.kind)) +
                      (cfg.weights_path.empty() ? std::string(" (no weights_path configured)")
                                                : ": " + cfg.weights_path));
  }
  return std::make_unique<PrecomputedEncoder>(cfg);
}

}  // namespace mtlam

#endif  // MTLAM_ENCODER_HPP_
