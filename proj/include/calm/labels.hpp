#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace calm {

// Fixed annotation inventories. The same lists ship as data/label_inventories.json;
// a test keeps file and code in sync.
inline const std::vector<std::string>& topic_labels() {
  static const std::vector<std::string> labels = {
      "Politics",
      "Fashion",
      "Sports",
      "Science and Technology",
      "Entertainment_Music",
      "Entertainment_Movies",
      "Entertainment_Books",
      "Entertainment_General",
      "Phatic",
      "Other",
      "Interactive",
      "Inappropriate Content",
  };
  return labels;
}

inline const std::vector<std::string>& dialog_act_labels() {
  static const std::vector<std::string> labels = {
      "Information Request",
      "Information Delivery",
      "Opinion Request",
      "Opinion Expression",
      "General Chat",
      "Clarification",
      "Topic Switch",
      "User Instruction",
      "Instruction Response",
      "Interactive",
      "Other",
      "Multiple Goals",
      "Frustration Expression",
      "Not Set",
  };
  return labels;
}

enum class LabelKind { Topic, DialogAct };

// Ordered label set for one annotation task. Label order is part of the
// contract: classifier posteriors index into it and argmax ties resolve to
// the lowest index.
struct LabelInventory {
  LabelKind kind;
  std::vector<std::string> labels;

  static LabelInventory topics() { return {LabelKind::Topic, topic_labels()}; }
  static LabelInventory dialog_acts() { return {LabelKind::DialogAct, dialog_act_labels()}; }

  std::size_t size() const { return labels.size(); }

  std::optional<std::size_t> index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return i;
    }
    return std::nullopt;
  }

  bool contains(std::string_view label) const { return index_of(label).has_value(); }
};

inline bool is_topic_label(std::string_view s) {
  return LabelInventory::topics().contains(s);
}

inline bool is_dialog_act_label(std::string_view s) {
  return LabelInventory::dialog_acts().contains(s);
}

}  // namespace calm
