#ifndef MTLAM_AUGMENT_HPP_
#define MTLAM_AUGMENT_HPP_

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>
#include <sys/wait.h>

#include "mtlam/common.hpp"
#include "mtlam/record.hpp"
#include "mtlam/text.hpp"

namespace mtlam {

enum class AugmentMethod { kBacktranslate, kContextual, kSynonym, kCrop };

inline constexpr std::array<AugmentMethod, 4> kAllAugmentMethods = {
    AugmentMethod::kBacktranslate, AugmentMethod::kContextual, AugmentMethod::kSynonym,
    AugmentMethod::kCrop};

inline std::string_view to_string(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::kBacktranslate: return "BACKTRANSLATE";
    case AugmentMethod::kContextual: return "CONTEXTUAL";
    case AugmentMethod::kSynonym: return "SYNONYM";
    case AugmentMethod::kCrop: return "CROP";
  }
  return "?";
}

inline AugmentMethod parse_augment_method(std::string_view s) {
  for (auto m : kAllAugmentMethods) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown augmentation method '" + std::string(s) + "'");
}

// Suffix appended to the source record_id for each augmented copy.
inline std::string_view id_suffix(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::kBacktranslate: return "#bt";
    case AugmentMethod::kContextual: return "#ctx";
    case AugmentMethod::kSynonym: return "#syn";
    case AugmentMethod::kCrop: return "#crop";
  }
  return "#?";
}

struct AugmenterConfig {
  double substitution_rate = 0.30;
  std::string source_language = "en";
  std::string backtranslation_target = "de";
  std::uint64_t seed = 0;
  std::set<AugmentMethod> enabled = {kAllAugmentMethods.begin(), kAllAugmentMethods.end()};

  void check() const {
    if (!(substitution_rate > 0 && substitution_rate < 1)) {
      throw ConfigError("substitution_rate must be in (0, 1)");
    }
  }
};

// Providers. Implementations may throw to signal failure; the augmenter turns
// that into a per-record diagnostic.

class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(const std::string& text, const std::string& from,
                                const std::string& to) = 0;
};

class MaskedPredictor {
 public:
  virtual ~MaskedPredictor() = default;
  /// Single replacement token for position `index`, given the full context.
  virtual std::string predict(const std::vector<std::string>& tokens, std::size_t index) = 0;
};

class SynonymProvider {
 public:
  virtual ~SynonymProvider() = default;
  virtual std::optional<std::string> synonym(const std::string& token) const = 0;
};

class IdentityTranslator final : public Translator {
 public:
  std::string translate(const std::string& text, const std::string&,
                        const std::string&) override {
    return text;
  }
};

/// Returns the original token; substitution with it leaves the text unchanged.
class EchoPredictor final : public MaskedPredictor {
 public:
  std::string predict(const std::vector<std::string>& tokens, std::size_t index) override {
    return tokens.at(index);
  }
};

/// Lookup table keyed on lowercased tokens.
class SynonymTable final : public SynonymProvider {
 public:
  SynonymTable() = default;
  explicit SynonymTable(std::map<std::string, std::string> table) {
    for (auto& [k, v] : table) table_[to_lower(k)] = std::move(v);
  }

  /// Tab-separated `word<TAB>synonym` rows; '#' starts a comment line.
  static SynonymTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read synonym table " + path);
    std::map<std::string, std::string> table;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      std::string value = line.substr(tab + 1);
      if (!value.empty() && value.back() == '\r') value.pop_back();
      table[line.substr(0, tab)] = value;
    }
    return SynonymTable(std::move(table));
  }

  /// Small table shipped with the library so the pipeline runs offline.
  static SynonymTable bundled() {
    return SynonymTable({
        {"good", "fine"},          {"bad", "poor"},           {"big", "large"},
        {"small", "little"},       {"think", "believe"},      {"say", "state"},
        {"said", "stated"},        {"people", "citizens"},    {"argument", "case"},
        {"true", "correct"},       {"false", "wrong"},        {"important", "crucial"},
        {"fact", "truth"},         {"idea", "notion"},        {"show", "demonstrate"},
        {"agree", "concur"},       {"disagree", "differ"},    {"believe", "trust"},
        {"evidence", "proof"},     {"reason", "cause"},       {"government", "administration"},
        {"law", "statute"},        {"country", "nation"},     {"right", "correct"},
        {"wrong", "incorrect"},    {"help", "aid"},           {"problem", "issue"},
        {"change", "alter"},       {"clear", "obvious"},      {"many", "numerous"},
        {"often", "frequently"},   {"quick", "fast"},         {"start", "begin"},
        {"end", "finish"},         {"claim", "assert"},       {"point", "position"},
        {"support", "back"},       {"oppose", "resist"},      {"stupid", "foolish"},
        {"smart", "clever"},       {"danger", "threat"},      {"safe", "secure"},
        {"money", "funds"},        {"children", "kids"},      {"world", "globe"},
        {"example", "instance"},   {"simply", "merely"},      {"very", "extremely"},
        {"maybe", "perhaps"},      {"understand", "grasp"},
    });
  }

  std::optional<std::string> synonym(const std::string& token) const override {
    const auto it = table_.find(to_lower(token));
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, std::string> table_;
};

namespace detail {

inline std::string run_command(const std::string& command, const std::string& input) {
  char path[] = "/tmp/mtlam-provider-XXXXXX";
  const int fd = mkstemp(path);
  if (fd < 0) throw std::runtime_error("provider: cannot create temp file");
  {
    std::ofstream tmp(path, std::ios::binary);
    tmp << input;
  }
  close(fd);
  const std::string full = command + " < '" + path + "'";
  FILE* pipe = popen(full.c_str(), "r");
  if (!pipe) {
    std::remove(path);
    throw std::runtime_error("provider: cannot start '" + command + "'");
  }
  std::string output;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
  const int status = pclose(pipe);
  std::remove(path);
  if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw std::runtime_error("provider command failed: " + command);
  }
  while (!output.empty() && (output.back() == '\n' || output.back() == '\r')) output.pop_back();
  return output;
}

inline bool is_plain_word(const std::string& s) {
  if (s.empty()) return false;
  for (unsigned char c : s) {
    if (!std::isalnum(c) && c != '-' && c != '_') return false;
  }
  return true;
}

}  // namespace detail

/// Out-of-process translator. The command is run as `<cmd> <from> <to>` with
/// the text on stdin and must print the translation on stdout, exiting 0.
class CommandTranslator final : public Translator {
 public:
  explicit CommandTranslator(std::string command) : command_(std::move(command)) {}

  std::string translate(const std::string& text, const std::string& from,
                        const std::string& to) override {
    if (!detail::is_plain_word(from) || !detail::is_plain_word(to)) {
      throw std::runtime_error("translator: bad language code");
    }
    return detail::run_command(command_ + " " + from + " " + to, text);
  }

 private:
  std::string command_;
};

/// Out-of-process masked-word predictor. Run as `<cmd> <index>` with one token
/// per line on stdin; prints the replacement token on stdout.
class CommandPredictor final : public MaskedPredictor {
 public:
  explicit CommandPredictor(std::string command) : command_(std::move(command)) {}

  std::string predict(const std::vector<std::string>& tokens, std::size_t index) override {
    std::string input;
    for (const auto& t : tokens) input += t + "\n";
    return detail::run_command(command_ + " " + std::to_string(index), input);
  }

 private:
  std::string command_;
};

struct AugmentOutcome {
  std::optional<Record> record;
  std::optional<Diagnostic> diagnostic;
};

namespace detail {

inline bool starts_word(const std::string& t) {
  return !t.empty() && is_word_byte(static_cast<unsigned char>(t.front()));
}
inline bool ends_word(const std::string& t) {
  return !t.empty() && is_word_byte(static_cast<unsigned char>(t.back()));
}

// Re-joins edited tokens; an empty separator between two word tokens becomes a
// space so the edit cannot merge them.
inline std::string rejoin(SegmentedText seg) {
  for (std::size_t i = 1; i < seg.tokens.size(); ++i) {
    if (seg.separators[i].empty() && ends_word(seg.tokens[i - 1]) &&
        starts_word(seg.tokens[i])) {
      seg.separators[i] = " ";
    }
  }
  return seg.join();
}

inline std::size_t selection_size(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 1e-9));
}

inline Record derived(const Record& src, AugmentMethod m, std::string text) {
  Record out = src;
  out.record_id = src.record_id + std::string(id_suffix(m));
  out.text = std::move(text);
  out.augmented_from = src.record_id;
  return out;
}

inline Rng record_rng(const AugmenterConfig& cfg, AugmentMethod m, const Record& r) {
  return Rng(derive_seed(cfg.seed, to_string(m), r.record_id));
}

}  // namespace detail

/// Round-trip translation through the configured target language.
inline AugmentOutcome back_translate(const Record& record, Translator& translator,
                                     const AugmenterConfig& cfg) {
  try {
    const std::string there =
        translator.translate(record.text, cfg.source_language, cfg.backtranslation_target);
    std::string back = translator.translate(there, cfg.backtranslation_target, cfg.source_language);
    if (tokenize(back).empty()) {
      return {std::nullopt, Diagnostic{record.record_id, "back-translation produced empty text"}};
    }
    return {detail::derived(record, AugmentMethod::kBacktranslate, std::move(back)), std::nullopt};
  } catch (const std::exception& e) {
    return {std::nullopt, Diagnostic{record.record_id, std::string("translator: ") + e.what()}};
  }
}

/// Replaces floor(rate * n) randomly chosen tokens with the predictor's output.
/// Every prediction sees the original token sequence.
inline AugmentOutcome contextual_substitute(const Record& record, MaskedPredictor& predictor,
                                            const AugmenterConfig& cfg) {
  auto seg = segment(record.text);
  const std::size_t n = seg.tokens.size();
  if (n == 0) return {std::nullopt, Diagnostic{record.record_id, "no tokens"}};
  Rng rng = detail::record_rng(cfg, AugmentMethod::kContextual, record);
  const auto picks = sample_without_replacement(rng, n, detail::selection_size(cfg.substitution_rate, n));
  const std::vector<std::string> context = seg.tokens;
  try {
    for (std::size_t i : picks) {
      std::string tok = predictor.predict(context, i);
      if (tokenize(tok).size() != 1 || tokenize(tok).front() != tok) {
        return {std::nullopt, Diagnostic{record.record_id, "predictor returned '" + tok +
                                                               "', not a single token"}};
      }
      seg.tokens[i] = std::move(tok);
    }
  } catch (const std::exception& e) {
    return {std::nullopt, Diagnostic{record.record_id, std::string("predictor: ") + e.what()}};
  }
  if (picks.empty()) return {detail::derived(record, AugmentMethod::kContextual, record.text), std::nullopt};
  return {detail::derived(record, AugmentMethod::kContextual, detail::rejoin(std::move(seg))),
          std::nullopt};
}

/// Picks floor(rate * n) positions and swaps in a synonym where one exists;
/// positions without a synonym stay as they are.
inline AugmentOutcome synonym_substitute(const Record& record, const SynonymProvider& synonyms,
                                         const AugmenterConfig& cfg) {
  auto seg = segment(record.text);
  const std::size_t n = seg.tokens.size();
  if (n == 0) return {std::nullopt, Diagnostic{record.record_id, "no tokens"}};
  Rng rng = detail::record_rng(cfg, AugmentMethod::kSynonym, record);
  const auto picks = sample_without_replacement(rng, n, detail::selection_size(cfg.substitution_rate, n));
  bool changed = false;
  for (std::size_t i : picks) {
    auto syn = synonyms.synonym(seg.tokens[i]);
    if (!syn) continue;
    const auto pieces = tokenize(*syn);
    if (pieces.size() != 1 || pieces.front() != *syn) continue;
    seg.tokens[i] = std::move(*syn);
    changed = true;
  }
  std::string text = changed ? detail::rejoin(std::move(seg)) : record.text;
  return {detail::derived(record, AugmentMethod::kSynonym, std::move(text)), std::nullopt};
}

/// Deletes floor(rate * n) randomly chosen tokens, keeping survivor order.
inline AugmentOutcome random_crop(const Record& record, const AugmenterConfig& cfg) {
  const auto seg = segment(record.text);
  const std::size_t n = seg.tokens.size();
  if (n < 2) return {std::nullopt, Diagnostic{record.record_id, "too few tokens to crop"}};
  const std::size_t k = detail::selection_size(cfg.substitution_rate, n);
  if (k >= n) return {std::nullopt, Diagnostic{record.record_id, "crop would empty the text"}};
  Rng rng = detail::record_rng(cfg, AugmentMethod::kCrop, record);
  const auto drop = sample_without_replacement(rng, n, k);
  std::vector<bool> dropped(n, false);
  for (std::size_t i : drop) dropped[i] = true;

  SegmentedText out;
  std::optional<std::string> run_separator;
  for (std::size_t i = 0; i < n; ++i) {
    if (dropped[i]) {
      if (!run_separator) run_separator = seg.separators[i];
      continue;
    }
    out.separators.push_back(run_separator ? *run_separator : seg.separators[i]);
    out.tokens.push_back(seg.tokens[i]);
    run_separator.reset();
  }
  out.separators.push_back(seg.separators.back());
  return {detail::derived(record, AugmentMethod::kCrop, detail::rejoin(std::move(out))),
          std::nullopt};
}

struct AugmentProviders {
  Translator* translator = nullptr;
  MaskedPredictor* predictor = nullptr;
  const SynonymProvider* synonyms = nullptr;
};

struct AugmentCorpusResult {
  std::vector<Record> records;
  std::vector<Diagnostic> diagnostics;
};

/// Originals followed by one copy per enabled method per eligible record, in
/// input order and method order. Only TRAIN records are accepted.
inline AugmentCorpusResult augment_corpus(const std::vector<Record>& records,
                                          const AugmentProviders& providers,
                                          const AugmenterConfig& cfg) {
  cfg.check();
  for (const auto& r : records) {
    if (r.split != Split::kTrain) {
      throw DataError("augment: record " + r.record_id + " is not in the TRAIN split");
    }
  }
  const auto on = [&](AugmentMethod m) { return cfg.enabled.count(m) > 0; };
  if (on(AugmentMethod::kBacktranslate) && !providers.translator) {
    throw ConfigError("augment: BACKTRANSLATE enabled without a translator");
  }
  if (on(AugmentMethod::kContextual) && !providers.predictor) {
    throw ConfigError("augment: CONTEXTUAL enabled without a masked predictor");
  }
  if (on(AugmentMethod::kSynonym) && !providers.synonyms) {
    throw ConfigError("augment: SYNONYM enabled without a synonym provider");
  }

  AugmentCorpusResult result;
  result.records = records;
  for (const auto& r : records) {
    for (AugmentMethod m : kAllAugmentMethods) {
      if (!on(m)) continue;
      AugmentOutcome o;
      switch (m) {
        case AugmentMethod::kBacktranslate: o = back_translate(r, *providers.translator, cfg); break;
        case AugmentMethod::kContextual: o = contextual_substitute(r, *providers.predictor, cfg); break;
        case AugmentMethod::kSynonym: o = synonym_substitute(r, *providers.synonyms, cfg); break;
        case AugmentMethod::kCrop: o = random_crop(r, cfg); break;
      }
      if (o.record) result.records.push_back(std::move(*o.record));
      if (o.diagnostic) {
        o.diagnostic->message = std::string(to_string(m)) + ": " + o.diagnostic->message;
        result.diagnostics.push_back(std::move(*o.diagnostic));
      }
    }
  }
  return result;
}

}  // namespace mtlam

#endif  // MTLAM_AUGMENT_HPP_
