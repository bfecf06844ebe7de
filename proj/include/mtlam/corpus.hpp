#ifndef MTLAM_CORPUS_HPP_
#define MTLAM_CORPUS_HPP_

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/tokenizer.hpp>

#include "mtlam/common.hpp"
#include "mtlam/record.hpp"
#include "mtlam/tasks.hpp"
#include "mtlam/text.hpp"

namespace mtlam {

/// Binary label from a continuous annotation by cutting at the scale midpoint.
/// A score exactly at the midpoint maps to 1 unless `tie_to_positive` is off.
inline Label dichotomize(double score, double scale_min, double scale_max,
                         bool tie_to_positive = true) {
  if (!(scale_min < scale_max)) throw ConfigError("dichotomize: empty scale");
  if (!std::isfinite(score) || score < scale_min || score > scale_max) {
    throw RangeError("score " + std::to_string(score) + " outside [" +
                     std::to_string(scale_min) + ", " + std::to_string(scale_max) + "]");
  }
  const double mid = 0.5 * (scale_min + scale_max);
  if (score == mid) return tie_to_positive ? 1 : 0;
  return score > mid ? 1 : 0;
}

struct IngestResult {
  std::vector<Record> records;
  std::vector<Diagnostic> diagnostics;
};

namespace detail {

inline std::vector<std::string> split_delimited(const std::string& line, char delim) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', delim, '"'));
  return {tok.begin(), tok.end()};
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  std::istringstream in{std::string(s)};
  in.imbue(std::locale::classic());
  in >> out;
  return in && in.peek() == std::char_traits<char>::eof() && std::isfinite(out);
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space_byte(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space_byte(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Internet Argument Corpus adapter.
///
/// Input is delimited text with a header row. Required columns: `id` and
/// `text`; any of the eight characteristic slugs (`disagree_agree`,
/// `emotion_fact`, ...) may appear as score columns in [-5, 5]. An empty score
/// cell means the post was not annotated on that characteristic. Fields may be
/// double-quoted; backslash escapes the quote character.
inline IngestResult ingest_iac(std::istream& in, char delim = ',') {
  const auto& reg = TaskRegistry::instance();
  IngestResult result;
  std::string line;
  if (!std::getline(in, line)) throw DataError("IAC input: missing header row");
  const auto header = detail::split_delimited(detail::strip_cr(line), delim);
  int id_col = -1, text_col = -1;
  std::vector<std::pair<std::size_t, TaskId>> score_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::trim(header[c]);
    if (name == "id") {
      id_col = static_cast<int>(c);
    } else if (name == "text") {
      text_col = static_cast<int>(c);
    } else if (auto t = reg.find_slug(name); t && reg.task(*t).type == TaskType::kIac) {
      score_cols.emplace_back(c, *t);
    }
  }
  if (id_col < 0 || text_col < 0) throw DataError("IAC input: header needs 'id' and 'text'");
  if (score_cols.empty()) throw DataError("IAC input: no characteristic columns in header");

  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const std::string where = "iac row " + std::to_string(row);
    std::vector<std::string> fields;
    try {
      fields = detail::split_delimited(line, delim);
    } catch (const boost::escaped_list_error& e) {
      result.diagnostics.push_back({where, std::string("unparsable row: ") + e.what()});
      continue;
    }
    if (fields.size() != header.size()) {
      result.diagnostics.push_back({where, "expected " + std::to_string(header.size()) +
                                               " fields, got " + std::to_string(fields.size())});
      continue;
    }
    Record r;
    r.record_id = "iac-" + detail::trim(fields[id_col]);
    r.text = fields[text_col];
    r.task_type = TaskType::kIac;
    if (detail::trim(fields[id_col]).empty() || detail::trim(r.text).empty()) {
      result.diagnostics.push_back({where, "empty id or text"});
      continue;
    }
    std::string error;
    for (auto [col, task] : score_cols) {
      const std::string cell = detail::trim(fields[col]);
      if (cell.empty()) continue;
      double score = 0;
      if (!detail::parse_double(cell, score)) {
        error = "non-numeric score '" + cell + "' for " + std::string(reg.task(task).slug);
        break;
      }
      try {
        r.labels[task] = dichotomize(score, -5.0, 5.0);
      } catch (const RangeError& e) {
        error = std::string(reg.task(task).slug) + ": " + e.what();
        break;
      }
    }
    if (error.empty() && r.label_count() == 0) error = "no characteristic scores";
    if (error.empty() && !seen.insert(r.record_id).second) error = "duplicate id " + r.record_id;
    if (!error.empty()) {
      result.diagnostics.push_back({where, error});
      continue;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

/// IBM-Rank-30k adapter.
///
/// Delimited text with a header row holding `argument` and `WA` (the weighted
/// average quality score in [0, 1]); an `id` column is optional and defaults
/// to the row number.
inline IngestResult ingest_ibm(std::istream& in, char delim = ',') {
  const TaskId quality = TaskRegistry::instance().quality_task();
  IngestResult result;
  std::string line;
  if (!std::getline(in, line)) throw DataError("IBM input: missing header row");
  const auto header = detail::split_delimited(detail::strip_cr(line), delim);
  int id_col = -1, text_col = -1, score_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = detail::trim(header[c]);
    if (name == "id") id_col = static_cast<int>(c);
    if (name == "argument") text_col = static_cast<int>(c);
    if (name == "WA") score_col = static_cast<int>(c);
  }
  if (text_col < 0 || score_col < 0) throw DataError("IBM input: header needs 'argument' and 'WA'");

  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const std::string where = "ibm row " + std::to_string(row);
    std::vector<std::string> fields;
    try {
      fields = detail::split_delimited(line, delim);
    } catch (const boost::escaped_list_error& e) {
      result.diagnostics.push_back({where, std::string("unparsable row: ") + e.what()});
      continue;
    }
    if (fields.size() != header.size()) {
      result.diagnostics.push_back({where, "field count mismatch"});
      continue;
    }
    Record r;
    r.record_id = "ibm-" + (id_col >= 0 ? detail::trim(fields[id_col]) : std::to_string(row - 1));
    r.text = fields[text_col];
    r.task_type = TaskType::kIbmQuality;
    double score = 0;
    if (detail::trim(r.text).empty()) {
      result.diagnostics.push_back({where, "empty argument text"});
      continue;
    }
    if (!detail::parse_double(fields[score_col], score)) {
      result.diagnostics.push_back({where, "non-numeric WA score"});
      continue;
    }
    try {
      r.labels[quality] = dichotomize(score, 0.0, 1.0);
    } catch (const RangeError& e) {
      result.diagnostics.push_back({where, e.what()});
      continue;
    }
    if (!seen.insert(r.record_id).second) {
      result.diagnostics.push_back({where, "duplicate id " + r.record_id});
      continue;
    }
    result.records.push_back(std::move(r));
  }
  return result;
}

/// Character span of one technique annotation, in code points of the article.
struct TechniqueSpan {
  std::string technique;
  std::size_t start;
  std::size_t end;
};

/// An article with one sentence per line and its technique annotations.
struct PropagandaArticle {
  std::string article_id;
  std::string text;
  std::vector<TechniqueSpan> spans;
};

namespace detail {

// Byte offset of every code point boundary, plus one past the end.
inline std::vector<std::size_t> code_point_offsets(std::string_view s) {
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(s.size());
  return offsets;
}

}  // namespace detail

/// One record per non-blank sentence (line), including sentences without any
/// technique. A technique is set for a sentence when its span overlaps it.
inline IngestResult ingest_propaganda(const std::vector<PropagandaArticle>& articles) {
  const TaskId task = TaskRegistry::instance().propaganda_task();
  IngestResult result;
  for (const auto& article : articles) {
    const auto cps = detail::code_point_offsets(article.text);
    const std::size_t n_cp = cps.size() - 1;
    struct ByteSpan {
      std::size_t technique, begin, end;
    };
    std::vector<ByteSpan> spans;
    for (const auto& span : article.spans) {
      const std::string where = "article " + article.article_id + " span " + span.technique +
                                " [" + std::to_string(span.start) + "," +
                                std::to_string(span.end) + ")";
      const auto tech = technique_index(span.technique);
      if (!tech) {
        result.diagnostics.push_back({where, "unknown technique"});
        continue;
      }
      if (span.start >= span.end || span.end > n_cp) {
        result.diagnostics.push_back({where, "span outside article bounds"});
        continue;
      }
      spans.push_back({*tech, cps[span.start], cps[span.end]});
    }

    std::size_t begin = 0, sentence = 0;
    while (begin <= article.text.size()) {
      std::size_t end = article.text.find('\n', begin);
      if (end == std::string::npos) end = article.text.size();
      std::string line = article.text.substr(begin, end - begin);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!detail::trim(line).empty()) {
        Record r;
        r.record_id = "ptc-" + article.article_id + "-" + std::to_string(sentence);
        r.text = line;
        r.task_type = TaskType::kPropaganda;
        TechniqueVector techniques{};
        for (const auto& s : spans) {
          if (s.begin < end && s.end > begin) techniques[s.technique] = 1;
        }
        r.raw_technique_labels = techniques;
        r.labels[task] = *std::max_element(techniques.begin(), techniques.end());
        result.records.push_back(std::move(r));
        ++sentence;
      }
      if (end == article.text.size()) break;
      begin = end + 1;
    }
  }
  return result;
}

/// Reads `article<ID>.txt` files and their `article<ID>.labels.tsv` companions
/// (rows: article id, technique, start, end; tab separated) from a directory.
inline std::vector<PropagandaArticle> read_propaganda_dir(const std::filesystem::path& dir,
                                                          std::vector<Diagnostic>* diagnostics) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> texts;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("article", 0) == 0 && entry.path().extension() == ".txt") {
      texts.push_back(entry.path());
    }
  }
  std::sort(texts.begin(), texts.end());
  std::vector<PropagandaArticle> articles;
  for (const auto& path : texts) {
    PropagandaArticle a;
    a.article_id = path.stem().string().substr(7);
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    a.text = buf.str();
    fs::path labels = path;
    labels.replace_extension(".labels.tsv");
    std::ifstream lin(labels);
    std::string line;
    std::size_t row = 0;
    while (lin && std::getline(lin, line)) {
      ++row;
      line = detail::strip_cr(line);
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, '\t')) f.push_back(cell);
      double s = 0, e = 0;
      if (f.size() != 4 || !detail::parse_double(f[2], s) || !detail::parse_double(f[3], e) ||
          s < 0 || e < 0) {
        if (diagnostics) {
          diagnostics->push_back({labels.filename().string() + " row " + std::to_string(row),
                                  "malformed label row"});
        }
        continue;
      }
      a.spans.push_back({f[1], static_cast<std::size_t>(s), static_cast<std::size_t>(e)});
    }
    articles.push_back(std::move(a));
  }
  return articles;
}

/// Assigns TRAIN/VAL/TEST. Within each task type records are ordered by a hash
/// of (seed, record_id) and cut into blocks whose sizes are the exact
/// proportions rounded by largest remainder (ties go to the earlier split).
inline std::vector<Record> split(std::vector<Record> records,
                                 std::array<double, 3> ratios, std::uint64_t seed) {
  if (records.empty()) throw DataError("split: no records");
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0) {
    throw ConfigError("split: ratios must be nonnegative and sum to 1");
  }
  const std::uint64_t key_seed = derive_seed(seed, "split");
  for (TaskType type : kAllTaskTypes) {
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].task_type == type) {
        order.emplace_back(splitmix64(key_seed ^ fnv1a(records[i].record_id)), i);
      }
    }
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return records[a.second].record_id < records[b.second].record_id;
    });
    const std::size_t n = order.size();
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double exact = ratios[s] * static_cast<double>(n);
      sizes[s] = static_cast<std::size_t>(std::floor(exact));
      frac[s] = exact - std::floor(exact);
      assigned += sizes[s];
    }
    std::array<int, 3> by_frac = {0, 1, 2};
    std::stable_sort(by_frac.begin(), by_frac.end(),
                     [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[by_frac[k % 3]];
    std::size_t pos = 0;
    const std::array<Split, 3> splits = {Split::kTrain, Split::kVal, Split::kTest};
    for (int s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < sizes[s]; ++c) records[order[pos++].second].split = splits[s];
    }
  }
  return records;
}

struct TaskStats {
  std::size_t n_train = 0;
  std::array<std::size_t, 2> class_counts{};
  /// Proportion of label 0 and label 1 among TRAIN labels.
  std::array<double, 2> class_balance{};
};

struct DatasetStats {
  std::array<TaskStats, kNumTasks> tasks{};
  /// |D_k|: number of TRAIN records per task type.
  std::array<std::size_t, kNumTaskTypes> type_sizes{};
};

/// Per-task label statistics over the TRAIN split. Records, not labels, count
/// toward |D_k|.
inline DatasetStats stats(const std::vector<Record>& records) {
  const auto& reg = TaskRegistry::instance();
  DatasetStats st;
  for (const auto& r : records) {
    if (r.split != Split::kTrain) continue;
    ++st.type_sizes[index_of(r.task_type)];
    for (TaskId t = 0; t < kNumTasks; ++t) {
      if (r.labels[t]) {
        ++st.tasks[t].n_train;
        ++st.tasks[t].class_counts[*r.labels[t]];
      }
    }
  }
  for (TaskId t = 0; t < kNumTasks; ++t) {
    auto& ts = st.tasks[t];
    if (ts.n_train == 0) {
      throw DataError("stats: task " + std::string(reg.task(t).name) + " has no TRAIN labels");
    }
    ts.class_balance[0] = static_cast<double>(ts.class_counts[0]) / ts.n_train;
    ts.class_balance[1] = 1.0 - ts.class_balance[0];
  }
  return st;
}

/// Human-readable table of the statistics.
inline std::string format_stats(const DatasetStats& st) {
  const auto& reg = TaskRegistry::instance();
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %12s %9s\n", "Task", "Training N", "Balance");
  out << buf;
  for (const auto& spec : reg.tasks()) {
    const auto& ts = st.tasks[spec.id];
    std::snprintf(buf, sizeof buf, "%-24s %12zu %5.0f/%-3.0f\n", std::string(spec.name).c_str(),
                  ts.n_train, 100.0 * ts.class_balance[0], 100.0 * ts.class_balance[1]);
    out << buf;
  }
  for (TaskType k : kAllTaskTypes) {
    std::snprintf(buf, sizeof buf, "|D_%s| = %zu\n", std::string(to_string(k)).c_str(),
                  st.type_sizes[index_of(k)]);
    out << buf;
  }
  return out.str();
}

/// Class-1 prevalence per task of the training data this project was modeled
/// on, used as the synthetic generator's default marginals.
inline constexpr std::array<double, kNumTasks> kReferencePositiveRate = {
    0.37, 0.79, 0.59, 0.34, 0.27, 0.75, 0.62, 0.56, 0.34, 0.94};

struct SynthConfig {
  std::size_t n_per_type = 200;
  /// Probability that a text carries the token of its class for a task.
  double separability = 1.0;
  std::uint64_t seed = 0;
  /// Loading of every task on a shared per-record latent factor; induces label
  /// correlation between tasks of the same type.
  double shared_factor = 0.7;
  /// Probability that an IAC characteristic is annotated (at least one always is).
  double iac_label_rate = 0.5;
  std::size_t filler_vocabulary = 400;
  std::size_t min_filler = 8;
  std::size_t max_filler = 16;
  std::array<double, kNumTasks> positive_rate = kReferencePositiveRate;
  /// Size of a cue-word pool shared by every task (0 disables it). Each text
  /// gets `cues_per_record` cue words, drawn from the upper half of the pool
  /// with probability Phi(latent) and from the lower half otherwise, so the
  /// cues speak to every task's label at once.
  std::size_t cue_vocabulary = 0;
  std::size_t cues_per_record = 4;
};

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::string technique_token(std::size_t technique) {
  std::string s = to_lower(kTechniqueNames[technique]);
  for (auto& c : s) {
    if (!is_word_byte(static_cast<unsigned char>(c))) c = '_';
  }
  return s;
}

}  // namespace detail

/// The token that marks class `label` of `task` in synthetic text.
inline std::string class_token(TaskId task, Label label) {
  return std::string(TaskRegistry::instance().task(task).classes[label]);
}

/// Synthetic corpus covering all three task types and ten tasks. Each text
/// holds random filler words and, with probability `separability` per task,
/// the token naming its class. Labels of tasks sharing a type are correlated
/// through a per-record latent factor (Gaussian copula with the configured
/// marginals).
inline std::vector<Record> synthesize(const SynthConfig& cfg) {
  if (cfg.separability < 0 || cfg.separability > 1) {
    throw ConfigError("synthesize: separability must be in [0, 1]");
  }
  if (cfg.shared_factor < 0 || cfg.shared_factor >= 1) {
    throw ConfigError("synthesize: shared_factor must be in [0, 1)");
  }
  if (cfg.min_filler > cfg.max_filler || cfg.filler_vocabulary == 0) {
    throw ConfigError("synthesize: bad filler settings");
  }
  const auto& reg = TaskRegistry::instance();
  std::array<double, kNumTasks> cut{};
  for (TaskId t = 0; t < kNumTasks; ++t) {
    const double p = cfg.positive_rate[t];
    if (!(p > 0 && p < 1)) throw ConfigError("synthesize: positive rates must be in (0, 1)");
    cut[t] = detail::normal_quantile(1.0 - p);
  }
  const double load = cfg.shared_factor;
  const double own = std::sqrt(1.0 - load * load);

  std::vector<Record> out;
  out.reserve(3 * cfg.n_per_type);
  for (TaskType type : kAllTaskTypes) {
    const auto tasks = reg.tasks_of(type);
    const std::string prefix = "syn-" + to_lower(to_string(type)) + "-";
    for (std::size_t i = 0; i < cfg.n_per_type; ++i) {
      Record r;
      r.record_id = prefix + std::to_string(i);
      r.task_type = type;
      Rng rng(derive_seed(cfg.seed, "synthesize", r.record_id));

      const std::size_t n_filler =
          cfg.min_filler + uniform_index(rng, cfg.max_filler - cfg.min_filler + 1);
      std::vector<std::string> words;
      for (std::size_t w = 0; w < n_filler; ++w) {
        words.push_back("w" + std::to_string(uniform_index(rng, cfg.filler_vocabulary)));
      }
      std::vector<std::string> marks;

      const double latent = standard_normal(rng);
      LabelMap truth{};
      for (TaskId t : tasks) {
        const double z = load * latent + own * standard_normal(rng);
        truth[t] = z > cut[t] ? 1 : 0;
        if (bernoulli(rng, cfg.separability)) marks.push_back(class_token(t, *truth[t]));
      }
      if (type == TaskType::kIac) {
        const std::size_t forced = tasks[uniform_index(rng, tasks.size())];
        for (TaskId t : tasks) {
          if (t == forced || bernoulli(rng, cfg.iac_label_rate)) r.labels[t] = truth[t];
        }
      } else {
        r.labels[tasks.front()] = truth[tasks.front()];
      }
      if (type == TaskType::kPropaganda) {
        TechniqueVector tv{};
        if (*truth[tasks.front()] == 1) {
          const std::size_t n_tech = 1 + uniform_index(rng, 2);
          for (std::size_t k = 0; k < n_tech; ++k) tv[uniform_index(rng, kNumTechniques)] = 1;
          for (std::size_t k = 0; k < kNumTechniques; ++k) {
            if (tv[k] && bernoulli(rng, cfg.separability)) {
              marks.push_back(detail::technique_token(k));
            }
          }
        }
        r.raw_technique_labels = tv;
      }
      for (auto& m : marks) {
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, words.size() + 1)),
                     std::move(m));
      }
      if (cfg.cue_vocabulary >= 2) {
        const std::size_t half = cfg.cue_vocabulary / 2;
        const double p_high = detail::normal_cdf(latent);
        for (std::size_t c = 0; c < cfg.cues_per_record; ++c) {
          const std::size_t cue = (bernoulli(rng, p_high) ? half : 0) + uniform_index(rng, half);
          words.insert(words.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, words.size() + 1)),
                       "c" + std::to_string(cue));
        }
      }
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (w) r.text += ' ';
        r.text += words[w];
      }
      r.text += " .";
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace mtlam

#endif  // MTLAM_CORPUS_HPP_
