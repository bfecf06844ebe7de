#ifndef MTLAM_CONFIG_HPP_
#define MTLAM_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlam/augment.hpp"
#include "mtlam/checkpoint.hpp"
#include "mtlam/corpus.hpp"
#include "mtlam/diagnostics.hpp"
#include "mtlam/train.hpp"

namespace mtlam {

struct DataConfig {
  std::string iac_path;
  std::string ibm_path;
  std::string propaganda_dir;
  char delimiter = ',';
  std::optional<SynthConfig> synthetic;
  std::array<double, 3> split_ratios = {0.8, 0.1, 0.1};
};

struct DiagnosticsConfig {
  std::size_t max_points = kDefaultMaxPoints;
  TsneConfig tsne;
};

struct ProfileSettings {
  std::vector<std::string> variants = {"multi_task", "single_task"};
  std::vector<double> fractions = {kProfileFractions.begin(), kProfileFractions.end()};
  std::size_t repeats = 3;
};

/// Everything a run needs besides its input files. One seed feeds every stage
/// through named substreams.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DataConfig data;
  AugmenterConfig augment;
  std::string synonyms_path;
  EncoderConfig encoder;
  HeadConfig head;
  TrainConfig train;
  GridSpec grid = default_grid();
  DiagnosticsConfig diagnostics;
  ProfileSettings profile;

  /// Pushes the top-level seed into each stage.
  void propagate_seed() {
    if (data.synthetic) data.synthetic->seed = derive_seed(seed, "synthesize");
    augment.seed = derive_seed(seed, "augment");
    encoder.seed = derive_seed(seed, "init");
    train.seed = derive_seed(seed, "train");
    diagnostics.tsne.seed = derive_seed(seed, "tsne");
  }
};

namespace detail {

inline SynthConfig synth_from_json(const nlohmann::json& j) {
  check_keys(j, {"n_per_type", "separability", "shared_factor", "iac_label_rate", "filler_vocabulary",
                 "min_filler", "max_filler", "cue_vocabulary", "cues_per_record"}, "data.synthetic");
  SynthConfig s;
  s.n_per_type = j.value("n_per_type", s.n_per_type);
  s.separability = j.value("separability", s.separability);
  s.shared_factor = j.value("shared_factor", s.shared_factor);
  s.iac_label_rate = j.value("iac_label_rate", s.iac_label_rate);
  s.filler_vocabulary = j.value("filler_vocabulary", s.filler_vocabulary);
  s.min_filler = j.value("min_filler", s.min_filler);
  s.max_filler = j.value("max_filler", s.max_filler);
  s.cue_vocabulary = j.value("cue_vocabulary", s.cue_vocabulary);
  s.cues_per_record = j.value("cues_per_record", s.cues_per_record);
  return s;
}

inline ojson synth_to_json(const SynthConfig& s) {
  return {{"n_per_type", s.n_per_type},         {"separability", s.separability},
          {"shared_factor", s.shared_factor},   {"iac_label_rate", s.iac_label_rate},
          {"filler_vocabulary", s.filler_vocabulary}, {"min_filler", s.min_filler},
          {"max_filler", s.max_filler},         {"cue_vocabulary", s.cue_vocabulary},
          {"cues_per_record", s.cues_per_record}};
}

}  // namespace detail

/// Parses a config object; unknown keys anywhere are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  check_keys(j, {"seed", "output_dir", "data", "augment", "encoder", "head", "train", "grid", "diagnostics",
                 "profile"}, "config");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("data")) {
      const auto& d = j["data"];
      check_keys(d, {"iac", "ibm", "propaganda_dir", "delimiter", "synthetic", "split_ratios"}, "data");
      c.data.iac_path = d.value("iac", "");
      c.data.ibm_path = d.value("ibm", "");
      c.data.propaganda_dir = d.value("propaganda_dir", "");
      const std::string delim = d.value("delimiter", ",");
      if (delim.size() != 1) throw ConfigError("data.delimiter must be one character");
      c.data.delimiter = delim[0];
      if (d.contains("synthetic")) c.data.synthetic = detail::synth_from_json(d["synthetic"]);
      if (d.contains("split_ratios")) c.data.split_ratios = d["split_ratios"].get<std::array<double, 3>>();
    }
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      check_keys(a, {"substitution_rate", "source_language", "backtranslation_target", "methods", "synonyms"},
                 "augment");
      c.augment.substitution_rate = a.value("substitution_rate", c.augment.substitution_rate);
      c.augment.source_language = a.value("source_language", c.augment.source_language);
      c.augment.backtranslation_target = a.value("backtranslation_target", c.augment.backtranslation_target);
      if (a.contains("methods")) {
        c.augment.enabled.clear();
        for (const auto& m : a["methods"]) c.augment.enabled.insert(parse_augment_method(m.get<std::string>()));
      }
      c.synonyms_path = a.value("synonyms", "");
      c.augment.check();
    }
    if (j.contains("encoder")) c.encoder = encoder_config_from_json(j["encoder"]);
    if (j.contains("head")) c.head = head_config_from_json(j["head"]);
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("grid")) {
      if (!j["grid"].is_object()) throw ConfigError("grid: expected an object of axes");
      c.grid.axes.clear();
      RunSettings probe;
      for (const auto& [name, values] : j["grid"].items()) {
        set_axis(probe, name, 1.0);  // rejects unknown names
        c.grid.axes.emplace_back(name, values.get<std::vector<double>>());
      }
    }
    if (j.contains("diagnostics")) {
      const auto& d = j["diagnostics"];
      check_keys(d, {"max_points", "perplexity", "iterations"}, "diagnostics");
      c.diagnostics.max_points = d.value("max_points", c.diagnostics.max_points);
      c.diagnostics.tsne.perplexity = d.value("perplexity", c.diagnostics.tsne.perplexity);
      c.diagnostics.tsne.iterations = d.value("iterations", c.diagnostics.tsne.iterations);
    }
    if (j.contains("profile")) {
      const auto& p = j["profile"];
      check_keys(p, {"variants", "fractions", "repeats"}, "profile");
      c.profile.variants = p.value("variants", c.profile.variants);
      c.profile.fractions = p.value("fractions", c.profile.fractions);
      c.profile.repeats = p.value("repeats", c.profile.repeats);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// The fully resolved config, every default spelled out.
inline ojson to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  ojson d;
  d["iac"] = c.data.iac_path;
  d["ibm"] = c.data.ibm_path;
  d["propaganda_dir"] = c.data.propaganda_dir;
  d["delimiter"] = std::string(1, c.data.delimiter);
  if (c.data.synthetic) d["synthetic"] = detail::synth_to_json(*c.data.synthetic);
  d["split_ratios"] = c.data.split_ratios;
  j["data"] = std::move(d);
  ojson methods = ojson::array();
  for (auto m : c.augment.enabled) methods.push_back(std::string(to_string(m)));
  j["augment"] = {{"substitution_rate", c.augment.substitution_rate},
                  {"source_language", c.augment.source_language},
                  {"backtranslation_target", c.augment.backtranslation_target},
                  {"methods", std::move(methods)},
                  {"synonyms", c.synonyms_path}};
  ojson enc = to_json(c.encoder);
  enc.erase("seed");
  j["encoder"] = std::move(enc);
  j["head"] = to_json(c.head);
  ojson tr = to_json(c.train);
  tr.erase("seed");
  j["train"] = std::move(tr);
  ojson grid = ojson::object();
  for (const auto& [name, values] : c.grid.axes) grid[name] = values;
  j["grid"] = std::move(grid);
  j["diagnostics"] = {{"max_points", c.diagnostics.max_points},
                      {"perplexity", c.diagnostics.tsne.perplexity},
                      {"iterations", c.diagnostics.tsne.iterations}};
  j["profile"] = {{"variants", c.profile.variants},
                  {"fractions", c.profile.fractions},
                  {"repeats", c.profile.repeats}};
  return j;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a(buf.str());
}

/// Hash over input files (a directory contributes its regular files in name
/// order).
inline std::uint64_t hash_inputs(const std::vector<std::string>& paths) {
  std::uint64_t h = fnv1a("inputs");
  for (const auto& p : paths) {
    if (p.empty()) continue;
    std::vector<std::filesystem::path> files;
    if (std::filesystem::is_directory(p)) {
      for (const auto& e : std::filesystem::directory_iterator(p)) if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
    } else {
      files.emplace_back(p);
    }
    for (const auto& f : files) h = splitmix64(h ^ hash_file(f));
  }
  return h;
}

/// Writes resolved_config.json and manifest.json into `dir`.
inline void write_run_record(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command,
                             const std::vector<std::string>& inputs) {
  std::filesystem::create_directories(dir);
  const std::string resolved = to_json(cfg).dump(2);
  {
    std::ofstream out(dir / "resolved_config.json");
    if (!out) throw DataError("cannot write into " + dir.string());
    out << resolved << '\n';
  }
  ojson manifest;
  manifest["command"] = command;
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = hex64(fnv1a(resolved));
  manifest["inputs"] = inputs;
  manifest["data_hash"] = hex64(hash_inputs(inputs));
  manifest["config"] = "resolved_config.json";
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

}  // namespace mtlam

#endif  // MTLAM_CONFIG_HPP_
