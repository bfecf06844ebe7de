#ifndef MTLAM_TASKS_HPP_
#define MTLAM_TASKS_HPP_

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mtlam/common.hpp"

namespace mtlam {

enum class TaskType { kIac = 0, kIbmQuality = 1, kPropaganda = 2 };

inline constexpr std::size_t kNumTaskTypes = 3;
inline constexpr std::size_t kNumTasks = 10;
inline constexpr std::size_t kNumTechniques = 18;
inline constexpr std::size_t kNumRawSlots = 27;

inline constexpr std::array<TaskType, kNumTaskTypes> kAllTaskTypes = {
    TaskType::kIac, TaskType::kIbmQuality, TaskType::kPropaganda};

inline std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::kIac: return "IAC";
    case TaskType::kIbmQuality: return "IBM_QUALITY";
    case TaskType::kPropaganda: return "PROPAGANDA";
  }
  return "?";
}

inline TaskType parse_task_type(std::string_view s) {
  for (TaskType t : kAllTaskTypes) {
    if (to_string(t) == s) return t;
  }
  throw DataError("unknown task type '" + std::string(s) + "'");
}

inline std::size_t index_of(TaskType t) { return static_cast<std::size_t>(t); }

using TaskId = std::size_t;

/// One binary target. `classes` is ordered (label 0, label 1).
struct TaskSpec {
  TaskId id;
  std::string_view name;
  std::string_view slug;
  TaskType type;
  std::array<std::string_view, 2> classes;
  std::size_t raw_slot_count;
  std::size_t raw_slot_offset;
};

// Technique names as they appear in the propaganda corpus label files.
inline constexpr std::array<std::string_view, kNumTechniques> kTechniqueNames = {
    "Loaded_Language",
    "Name_Calling,Labeling",
    "Repetition",
    "Exaggeration,Minimisation",
    "Doubt",
    "Appeal_to_fear-prejudice",
    "Flag-Waving",
    "Causal_Oversimplification",
    "Slogans",
    "Appeal_to_Authority",
    "Black-and-White_Fallacy",
    "Thought-terminating_Cliches",
    "Whataboutism",
    "Reductio_ad_hitlerum",
    "Red_Herring",
    "Bandwagon",
    "Obfuscation,Intentional_Vagueness,Confusion",
    "Straw_Men",
};

inline std::optional<std::size_t> technique_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumTechniques; ++i) {
    if (kTechniqueNames[i] == name) return i;
  }
  return std::nullopt;
}

/// The closed set of task types, tasks and raw output slots.
///
/// Raw output slots are laid out in task order: the 18 propaganda technique
/// slots first, then one slot per remaining task (27 in total). Pooling the
/// technique slots yields one probability per task (10 in total).
class TaskRegistry {
 public:
  static const TaskRegistry& instance() {
    static const TaskRegistry registry;
    return registry;
  }

  const std::array<TaskSpec, kNumTasks>& tasks() const { return tasks_; }
  const TaskSpec& task(TaskId id) const { return tasks_.at(id); }

  std::vector<TaskId> tasks_of(TaskType type) const {
    std::vector<TaskId> out;
    for (const auto& t : tasks_) {
      if (t.type == type) out.push_back(t.id);
    }
    return out;
  }

  std::size_t task_count(TaskType type) const { return tasks_of(type).size(); }

  std::optional<TaskId> find_slug(std::string_view slug) const {
    for (const auto& t : tasks_) {
      if (t.slug == slug) return t.id;
    }
    return std::nullopt;
  }

  TaskId propaganda_task() const { return 0; }
  TaskId quality_task() const { return 9; }

 private:
  TaskRegistry() {
    const TaskType iac = TaskType::kIac;
    tasks_ = {{
        {0, "Propaganda", "propaganda", TaskType::kPropaganda, {"none", "propaganda"}, 18, 0},
        {1, "Disagree/Agree", "disagree_agree", iac, {"disagree", "agree"}, 1, 18},
        {2, "Emotion/Fact", "emotion_fact", iac, {"emotion", "fact"}, 1, 19},
        {3, "Attacking/Respectful", "attacking_respectful", iac, {"attacking", "respectful"}, 1, 20},
        {4, "Nasty/Nice", "nasty_nice", iac, {"nasty", "nice"}, 1, 21},
        {5, "Personal/Audience", "personal_audience", iac, {"personal", "audience"}, 1, 22},
        {6, "Defeater/Undercutter", "defeater_undercutter", iac, {"defeater", "undercutter"}, 1, 23},
        {7, "Negotiate/Attack", "negotiate_attack", iac, {"negotiate", "attack"}, 1, 24},
        {8, "Questioning/Asserting", "questioning_asserting", iac, {"questioning", "asserting"}, 1, 25},
        {9, "Argument Quality", "argument_quality", TaskType::kIbmQuality, {"low", "high"}, 1, 26},
    }};
  }

  std::array<TaskSpec, kNumTasks> tasks_{};
};

}  // namespace mtlam

#endif  // MTLAM_TASKS_HPP_
