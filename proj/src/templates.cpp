#include "mecod/templates.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "mecod/error.hpp"
#include "mecod/io.hpp"

namespace mecod {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Splits "[P][P]" style runs so that every marker is its own piece.
std::vector<std::string> split_pieces(std::string_view spec) {
  std::vector<std::string> pieces;
  std::istringstream ss{std::string(spec)};
  std::string word;
  while (ss >> word) {
    std::size_t i = 0;
    while (i < word.size()) {
      bool marker = false;
      for (const char* m : {"[P]", "[X]", "[Y]"}) {
        if (word.compare(i, 3, m) == 0) {
          pieces.emplace_back(m);
          i += 3;
          marker = true;
          break;
        }
      }
      if (marker) continue;
      std::size_t next = word.size();
      for (const char* m : {"[P]", "[X]", "[Y]"}) next = std::min(next, word.find(m, i));
      pieces.push_back(word.substr(i, next - i));
      i = next;
    }
  }
  return pieces;
}

}  // namespace

int PromptTemplate::tunable_count() const {
  return static_cast<int>(std::count_if(slots.begin(), slots.end(),
                                        [](const Slot& s) { return std::holds_alternative<slot::Tunable>(s); }));
}

bool PromptTemplate::has_subject() const {
  return std::any_of(slots.begin(), slots.end(), [](const Slot& s) { return std::holds_alternative<slot::Subject>(s); });
}

std::string PromptTemplate::to_string() const {
  std::string out;
  for (const Slot& s : slots) {
    if (!out.empty()) out += ' ';
    std::visit(overloaded{[&](const slot::Literal& l) { out += l.text; }, [&](const slot::Subject&) { out += "[X]"; },
                          [&](const slot::ObjectMask&) { out += "[Y]"; }, [&](const slot::Tunable&) { out += "[P]"; }},
               s);
  }
  return out;
}

PromptTemplate parse_template(std::string_view spec, std::string relation_id) {
  PromptTemplate t;
  t.relation_id = std::move(relation_id);
  int tunables = 0;
  int objects = 0;
  int subjects = 0;
  for (const auto& piece : split_pieces(spec)) {
    if (piece == "[P]") {
      t.slots.emplace_back(slot::Tunable{tunables++});
    } else if (piece == "[X]") {
      ++subjects;
      t.slots.emplace_back(slot::Subject{});
    } else if (piece == "[Y]") {
      ++objects;
      t.slots.emplace_back(slot::ObjectMask{});
    } else {
      t.slots.emplace_back(slot::Literal{piece});
    }
  }
  if (objects != 1) {
    throw Error(ErrorKind::parse, "template must contain exactly one [Y], found " + std::to_string(objects) + ": '" +
                                      std::string(spec) + "'");
  }
  if (subjects > 1) throw Error(ErrorKind::parse, "template contains more than one [X]: '" + std::string(spec) + "'");
  return t;
}

std::map<std::string, PromptTemplate> load_templates(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(io::read_text(path));
  std::map<std::string, PromptTemplate> out;
  for (const auto& [rel, spec] : j.items()) out.emplace(rel, parse_template(spec.get<std::string>(), rel));
  return out;
}

void save_templates(const std::filesystem::path& path, const std::map<std::string, PromptTemplate>& templates) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [rel, t] : templates) j[rel] = t.to_string();
  io::write_text(path, j.dump(2) + "\n");
}

RenderedInput render(const PromptTemplate& tmpl, std::string_view subject, const MaskedLm& model) {
  const ModelHandle h = model.handle();
  RenderedInput out;
  auto push = [&](TokenId id, SlotTag tag, int tunable) {
    out.ids.push_back(id);
    out.tags.push_back(tag);
    out.tunable_index.push_back(tunable);
  };
  for (const Slot& s : tmpl.slots) {
    std::visit(overloaded{[&](const slot::Literal& l) {
                            for (TokenId id : model.tokenize(l.text)) push(id, SlotTag::literal, -1);
                          },
                          [&](const slot::Subject&) {
                            if (subject.find_first_not_of(" \t") == std::string_view::npos) {
                              throw Error(ErrorKind::invalid_argument, "template has a subject slot but no subject was given");
                            }
                            for (TokenId id : model.tokenize(subject)) push(id, SlotTag::subject, -1);
                          },
                          [&](const slot::ObjectMask&) {
                            out.object_position = static_cast<int>(out.ids.size());
                            push(h.special_ids.mask_id, SlotTag::object_mask, -1);
                          },
                          [&](const slot::Tunable& t) { push(h.special_ids.pad_id, SlotTag::tunable, t.index); }},
               s);
  }
  return out;
}

RenderedInput subject_mask(const RenderedInput& rendered, const ModelHandle& model) {
  RenderedInput out = rendered;
  bool any = false;
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    if (out.tags[i] == SlotTag::subject) {
      out.ids[i] = model.special_ids.mask_id;
      any = true;
    }
  }
  out.no_subject_warning = !any;
  return out;
}

RenderedInput render_masked_query(const PromptTemplate& tmpl, int subject_mask_count, const MaskedLm& model) {
  if (subject_mask_count < 1) throw Error(ErrorKind::invalid_argument, "subject mask count must be >= 1");
  std::string placeholder;
  const std::string& mask = model.vocabulary().token(model.handle().special_ids.mask_id);
  for (int i = 0; i < subject_mask_count; ++i) placeholder += (i ? " " : "") + mask;
  return subject_mask(render(tmpl, placeholder, model), model.handle());
}

}  // namespace mecod
