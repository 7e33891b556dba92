#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mecod/model.hpp"

namespace mecod {

namespace slot {
struct Literal {
  std::string text;
  bool operator==(const Literal&) const = default;
};
struct Subject {
  bool operator==(const Subject&) const = default;
};
struct ObjectMask {
  bool operator==(const ObjectMask&) const = default;
};
struct Tunable {
  int index = 0;
  bool operator==(const Tunable&) const = default;
};
}  // namespace slot

using Slot = std::variant<slot::Literal, slot::Subject, slot::ObjectMask, slot::Tunable>;

/// Template DSL: "[P]" tunable, "[X]" subject, "[Y]" object mask, any other
/// whitespace-separated word a literal. Markers may be written without spaces
/// ("[P][P] [Y]").
struct PromptTemplate {
  std::vector<Slot> slots;
  std::string relation_id;

  int tunable_count() const;
  bool has_subject() const;
  /// Canonical single-spaced spec string; parse_template(to_string()) == *this.
  std::string to_string() const;
  bool operator==(const PromptTemplate&) const = default;
};

PromptTemplate parse_template(std::string_view spec, std::string relation_id = {});

/// relation_id -> template, from a JSON object of template spec strings.
std::map<std::string, PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::filesystem::path& path, const std::map<std::string, PromptTemplate>& templates);

enum class SlotTag { literal, subject, object_mask, tunable };

struct RenderedInput {
  std::vector<TokenId> ids;
  std::vector<SlotTag> tags;
  /// Tunable slot index per position, -1 elsewhere.
  std::vector<int> tunable_index;
  int object_position = -1;
  /// Set by subject_mask when there was no subject span to mask.
  bool no_subject_warning = false;

  std::size_t size() const { return ids.size(); }
  bool operator==(const RenderedInput&) const = default;
};

/// Tunable positions carry the pad id as a placeholder.
RenderedInput render(const PromptTemplate& tmpl, std::string_view subject, const MaskedLm& model);

/// One mask token per subject token; every other position is unchanged.
RenderedInput subject_mask(const RenderedInput& rendered, const ModelHandle& model);

/// The relation-level subject-masked query: the subject slot is replaced by
/// `subject_mask_count` mask tokens.
RenderedInput render_masked_query(const PromptTemplate& tmpl, int subject_mask_count, const MaskedLm& model);

}  // namespace mecod
