#ifndef MTLAM_RECORD_HPP_
#define MTLAM_RECORD_HPP_

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlam/common.hpp"
#include "mtlam/tasks.hpp"

namespace mtlam {

enum class Split { kTrain, kVal, kTest };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "TRAIN";
    case Split::kVal: return "VAL";
    case Split::kTest: return "TEST";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "TRAIN") return Split::kTrain;
  if (s == "VAL") return Split::kVal;
  if (s == "TEST") return Split::kTest;
  throw DataError("unknown split '" + std::string(s) + "'");
}

using Label = std::uint8_t;
using LabelMap = std::array<std::optional<Label>, kNumTasks>;
using TechniqueVector = std::array<Label, kNumTechniques>;

/// One text with its task type and a partial label map over the 10 tasks.
struct Record {
  std::string record_id;
  std::string text;
  TaskType task_type = TaskType::kIac;
  LabelMap labels{};
  std::optional<TechniqueVector> raw_technique_labels;
  std::optional<Split> split;
  std::optional<std::string> augmented_from;

  bool has_label(TaskId t) const { return labels[t].has_value(); }

  std::size_t label_count() const {
    std::size_t n = 0;
    for (const auto& l : labels) n += l.has_value();
    return n;
  }

  bool operator==(const Record&) const = default;
};

/// Checks the record invariants; returns an empty string when valid.
inline std::string validate(const Record& r) {
  const auto& reg = TaskRegistry::instance();
  if (r.record_id.empty()) return "empty record_id";
  if (r.text.empty()) return "empty text";
  if (r.label_count() == 0) return "no labels";
  for (const auto& spec : reg.tasks()) {
    if (r.labels[spec.id] && spec.type != r.task_type) {
      return "label for task " + std::string(spec.slug) + " on a " +
             std::string(to_string(r.task_type)) + " record";
    }
    if (r.labels[spec.id] && *r.labels[spec.id] > 1) return "non-binary label";
  }
  const bool propaganda = r.task_type == TaskType::kPropaganda;
  if (propaganda != r.raw_technique_labels.has_value()) {
    return "raw_technique_labels must be present iff the record is PROPAGANDA";
  }
  if (propaganda) {
    Label mx = 0;
    for (Label v : *r.raw_technique_labels) {
      if (v > 1) return "non-binary technique label";
      mx = std::max(mx, v);
    }
    const auto& pl = r.labels[reg.propaganda_task()];
    if (!pl || *pl != mx) return "propaganda label differs from max of technique labels";
  }
  return {};
}

// Interchange format: one JSON object per line, fields in declaration order.

inline nlohmann::ordered_json to_json(const Record& r) {
  const auto& reg = TaskRegistry::instance();
  nlohmann::ordered_json j;
  j["record_id"] = r.record_id;
  j["text"] = r.text;
  j["task_type"] = to_string(r.task_type);
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
  for (const auto& spec : reg.tasks()) {
    if (r.labels[spec.id]) labels[std::string(spec.slug)] = *r.labels[spec.id];
  }
  j["labels"] = std::move(labels);
  if (r.raw_technique_labels) {
    j["raw_technique_labels"] = *r.raw_technique_labels;
  } else {
    j["raw_technique_labels"] = nullptr;
  }
  j["split"] = r.split ? nlohmann::ordered_json(to_string(*r.split)) : nullptr;
  j["augmented_from"] =
      r.augmented_from ? nlohmann::ordered_json(*r.augmented_from) : nullptr;
  return j;
}

inline Record record_from_json(const nlohmann::json& j) {
  static const std::array<std::string_view, 7> kFields = {
      "record_id", "text", "task_type", "labels", "raw_technique_labels",
      "split", "augmented_from"};
  if (!j.is_object()) throw DataError("record is not an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kFields.begin(), kFields.end(), key) == kFields.end()) {
      throw DataError("unknown record field '" + key + "'");
    }
  }
  const auto& reg = TaskRegistry::instance();
  Record r;
  try {
    r.record_id = j.at("record_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.task_type = parse_task_type(j.at("task_type").get<std::string>());
    for (const auto& [slug, value] : j.at("labels").items()) {
      const auto id = reg.find_slug(slug);
      if (!id) throw DataError("unknown task '" + slug + "'");
      const int v = value.get<int>();
      if (v != 0 && v != 1) throw DataError("non-binary label for " + slug);
      r.labels[*id] = static_cast<Label>(v);
    }
    if (j.contains("raw_technique_labels") && !j["raw_technique_labels"].is_null()) {
      const auto& arr = j["raw_technique_labels"];
      if (!arr.is_array() || arr.size() != kNumTechniques) {
        throw DataError("raw_technique_labels must have 18 entries");
      }
      TechniqueVector v{};
      for (std::size_t i = 0; i < kNumTechniques; ++i) v[i] = arr[i].get<Label>();
      r.raw_technique_labels = v;
    }
    if (j.contains("split") && !j["split"].is_null()) {
      r.split = parse_split(j["split"].get<std::string>());
    }
    if (j.contains("augmented_from") && !j["augmented_from"].is_null()) {
      r.augmented_from = j["augmented_from"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  if (auto err = validate(r); !err.empty()) {
    throw DataError("invalid record '" + r.record_id + "': " + err);
  }
  return r;
}

inline void write_records(std::ostream& out, const std::vector<Record>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<Record> read_records(std::istream& in) {
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline void save_records(const std::string& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_records(out, records);
}

inline std::vector<Record> load_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  return read_records(in);
}

inline std::vector<Record> filter_split(const std::vector<Record>& records, Split s) {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

}  // namespace mtlam

#endif  // MTLAM_RECORD_HPP_
