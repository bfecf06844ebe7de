#ifndef MTLAM_CHECKPOINT_HPP_
#define MTLAM_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlam/common.hpp"
#include "mtlam/encoder.hpp"
#include "mtlam/head.hpp"
#include "mtlam/loss.hpp"
#include "mtlam/thresholds.hpp"
#include "mtlam/train.hpp"

namespace mtlam {

using ojson = nlohmann::ordered_json;

inline ojson to_json(const EncoderConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"embedding_dim", c.embedding_dim},
          {"max_sequence_length", c.max_sequence_length},
          {"vocabulary_hash_buckets", c.vocabulary_hash_buckets},
          {"weights_path", c.weights_path},
          {"seed", c.seed}};
}

inline ojson to_json(const HeadConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden_width", c.hidden_width}, {"dropout_rate", c.dropout_rate}};
}

inline ojson to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"warmup_fraction", c.warmup_fraction},
          {"batch_size", c.batch_size},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"train_encoder", c.train_encoder}};
}

inline ojson to_json(const LossWeights& w) {
  ojson j;
  ojson types = ojson::object();
  for (TaskType k : kAllTaskTypes) types[std::string(to_string(k))] = w.type_weights[index_of(k)];
  j["type_weights"] = std::move(types);
  ojson classes = ojson::object();
  for (const auto& spec : TaskRegistry::instance().tasks()) {
    classes[std::string(spec.slug)] = w.class_weights[spec.id];
  }
  j["class_weights"] = std::move(classes);
  return j;
}

inline ojson to_json(const TrainHistory& h) {
  ojson epochs = ojson::array();
  for (const auto& e : h.epochs) {
    ojson f1 = ojson::object();
    for (const auto& spec : TaskRegistry::instance().tasks()) {
      if (e.val_f1[spec.id]) f1[std::string(spec.slug)] = *e.val_f1[spec.id];
    }
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"mean_val_f1", e.mean_val_f1},
                      {"val_f1", std::move(f1)},
                      {"seconds", e.seconds}});
  }
  return {{"epochs", std::move(epochs)},
          {"wall_seconds", h.wall_seconds},
          {"peak_memory_bytes", h.peak_memory_bytes}};
}

inline ojson registry_json() {
  ojson tasks = ojson::array();
  for (const auto& spec : TaskRegistry::instance().tasks()) {
    tasks.push_back({{"id", spec.id},
                     {"slug", spec.slug},
                     {"type", to_string(spec.type)},
                     {"classes", {spec.classes[0], spec.classes[1]}},
                     {"raw_slot_count", spec.raw_slot_count}});
  }
  return tasks;
}

// Readers accept exactly the keys the writers emit.

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(what + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig c = {}) {
  detail::check_keys(j, {"kind", "embedding_dim", "max_sequence_length", "vocabulary_hash_buckets",
                         "weights_path", "seed"}, "encoder");
  if (j.contains("kind")) {
    c.kind = parse_encoder_kind(j["kind"].get<std::string>());
    if (!j.contains("embedding_dim")) c.embedding_dim = default_embedding_dim(c.kind);
  }
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
  c.vocabulary_hash_buckets = j.value("vocabulary_hash_buckets", c.vocabulary_hash_buckets);
  c.weights_path = j.value("weights_path", c.weights_path);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline HeadConfig head_config_from_json(const nlohmann::json& j, HeadConfig c = {}) {
  detail::check_keys(j, {"input_dim", "hidden_width", "dropout_rate", "size_preset"}, "head");
  if (j.contains("size_preset")) c.hidden_width = preset_width(parse_size_preset(j["size_preset"].get<std::string>()));
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.check();
  return c;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  detail::check_keys(j, {"learning_rate", "weight_decay", "warmup_fraction", "batch_size",
                         "early_stop_patience", "max_epochs", "seed", "beta1", "beta2",
                         "adam_epsilon", "train_encoder"}, "train");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.train_encoder = j.value("train_encoder", c.train_encoder);
  c.check();
  return c;
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j) {
  const auto& reg = TaskRegistry::instance();
  LossWeights w;
  for (TaskType k : kAllTaskTypes) {
    w.type_weights[index_of(k)] = j.at("type_weights").at(std::string(to_string(k))).get<double>();
  }
  for (const auto& spec : reg.tasks()) {
    w.class_weights[spec.id] = j.at("class_weights").at(std::string(spec.slug)).get<std::array<double, 2>>();
  }
  return w;
}

/// Everything needed to rebuild and run a trained model.
struct Checkpoint {
  EncoderConfig encoder;
  std::vector<double> encoder_params;
  HeadParams head;
  LossWeights weights;
  TrainConfig train;
  std::optional<ThresholdSet> thresholds;
  ojson history = ojson::object();
};

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'L', 'A', 'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint: truncated file");
  return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (std::uint64_t{1} << 34)) throw DataError("checkpoint: implausible tensor size");
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("checkpoint: truncated tensor");
  return v;
}

}  // namespace detail

/// Layout: 8-byte magic, u32 version, u64 length + JSON metadata, then the head
/// and encoder parameter tensors as u64 count + raw little-endian doubles.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  ojson meta;
  meta["encoder"] = to_json(ck.encoder);
  meta["head"] = to_json(ck.head.config);
  meta["train"] = to_json(ck.train);
  meta["loss_weights"] = to_json(ck.weights);
  meta["thresholds"] = ck.thresholds ? to_json(*ck.thresholds) : ojson(nullptr);
  meta["task_registry"] = registry_json();
  meta["history"] = ck.history;
  const std::string text = meta.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_pod(out, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_doubles(out, ck.head.values);
  detail::write_doubles(out, ck.encoder_params);
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError(path + " is not a checkpoint");
  }
  if (detail::read_pod<std::uint32_t>(in) != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version");
  }
  const auto len = detail::read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint: truncated metadata");
  const auto meta = nlohmann::json::parse(text);
  if (meta.at("task_registry") != nlohmann::json(registry_json())) {
    throw DataError("checkpoint: task registry differs from this build");
  }
  Checkpoint ck;
  ck.encoder = encoder_config_from_json(meta.at("encoder"));
  ck.head.config = head_config_from_json(meta.at("head"));
  ck.train = train_config_from_json(meta.at("train"));
  ck.weights = loss_weights_from_json(meta.at("loss_weights"));
  if (!meta.at("thresholds").is_null()) ck.thresholds = thresholds_from_json(meta["thresholds"]);
  ck.history = meta.at("history");
  ck.head.values = detail::read_doubles(in);
  ck.encoder_params = detail::read_doubles(in);
  if (ck.head.values.size() != param_count(ck.head.config)) {
    throw DataError("checkpoint: head tensor size does not match its config");
  }
  return ck;
}

inline Checkpoint make_checkpoint(const Model& model, const LossWeights& w, const TrainConfig& cfg,
                                  const TrainHistory& history) {
  Checkpoint ck;
  ck.encoder = model.encoder->config();
  const auto p = model.encoder->parameters();
  ck.encoder_params.assign(p.begin(), p.end());
  ck.head = model.head;
  ck.weights = w;
  ck.train = cfg;
  ck.history = to_json(history);
  return ck;
}

/// Rebuilds the model stored in a checkpoint.
inline Model restore_model(const Checkpoint& ck) {
  Model m;
  m.encoder = load_encoder(ck.encoder);
  auto p = m.encoder->parameters();
  if (p.size() != ck.encoder_params.size()) throw DataError("checkpoint: encoder tensor size mismatch");
  std::copy(ck.encoder_params.begin(), ck.encoder_params.end(), p.begin());
  m.head = ck.head;
  return m;
}

}  // namespace mtlam

#endif  // MTLAM_CHECKPOINT_HPP_
