#pragma once

// JSON serialization of forms and predictions.
//
// Form file: {"page_w", "page_h", "elements":[{"id","kind","bbox":[x,y,w,h],
// "words","type"}], "groups":[{"kind","members"}]}. Unknown keys are errors.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "form2seq/docmodel.hpp"

namespace form2seq {

using json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require_keys(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
  if (!obj.is_object()) throw FormatError(std::string(where) + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw FormatError(std::string(where) + ": unknown field '" + it.key() + "'");
  }
}

inline const json& need(const json& obj, const char* key, const char* where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(std::string(where) + ": missing field '" + key + "'");
  return *it;
}

}  // namespace detail

inline json to_json(const Form& form) {
  json elements = json::array();
  for (const auto& e : form.elements) {
    json el;
    el["id"] = e.id;
    el["kind"] = std::string(to_string(e.kind));
    el["bbox"] = {e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h};
    el["words"] = e.words;
    el["type"] = e.gold_type ? json(std::string(to_string(*e.gold_type))) : json(nullptr);
    elements.push_back(std::move(el));
  }
  json groups = json::array();
  for (const auto& g : form.gold_groups)
    groups.push_back({{"kind", std::string(to_string(g.kind))}, {"members", g.members}});
  return {{"page_w", form.page_w}, {"page_h", form.page_h}, {"elements", elements}, {"groups", groups}};
}

inline GroupSet group_from_json(const json& j) {
  detail::require_keys(j, {"kind", "members"}, "group");
  const auto kind = parse_group_kind(detail::need(j, "kind", "group").get<std::string>());
  if (!kind) throw FormatError("group: unknown kind " + j["kind"].dump());
  GroupSet g{*kind, {}};
  for (const auto& m : detail::need(j, "members", "group")) g.members.insert(m.get<int>());
  return g;
}

inline json to_json(const GroupSet& g) {
  return {{"kind", std::string(to_string(g.kind))}, {"members", g.members}};
}

/// Parses and validates one form. Throws FormatError or ValidationError.
inline Form form_from_json(const json& j) {
  detail::require_keys(j, {"page_w", "page_h", "elements", "groups"}, "form");
  Form form;
  try {
    form.page_w = detail::need(j, "page_w", "form").get<double>();
    form.page_h = detail::need(j, "page_h", "form").get<double>();
    for (const auto& ej : detail::need(j, "elements", "form")) {
      detail::require_keys(ej, {"id", "kind", "bbox", "words", "type"}, "element");
      Element e;
      e.id = detail::need(ej, "id", "element").get<int>();
      const auto kind = detail::need(ej, "kind", "element").get<std::string>();
      if (kind == "textblock")
        e.kind = ElementKind::TextBlock;
      else if (kind == "widget")
        e.kind = ElementKind::Widget;
      else
        throw FormatError("element: unknown kind '" + kind + "'");
      const auto& bb = detail::need(ej, "bbox", "element");
      if (!bb.is_array() || bb.size() != 4) throw FormatError("element: bbox must be [x,y,w,h]");
      e.bbox = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
      if (auto it = ej.find("words"); it != ej.end()) e.words = it->get<std::vector<std::string>>();
      if (auto it = ej.find("type"); it != ej.end() && !it->is_null()) {
        const auto t = parse_type_class(it->get<std::string>());
        if (!t) throw FormatError("element: unknown type " + it->dump());
        e.gold_type = *t;
      }
      form.elements.push_back(std::move(e));
    }
    if (auto it = j.find("groups"); it != j.end())
      for (const auto& gj : *it) form.gold_groups.push_back(group_from_json(gj));
  } catch (const json::exception& ex) {
    throw FormatError(std::string("form: ") + ex.what());
  }
  validate(form);
  return form;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j, int indent = 1) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(indent) << '\n';
}

/// A form with the name it is reported under (file stem).
struct NamedForm {
  std::string name;
  Form form;
};

inline Form load_form(const std::filesystem::path& path) {
  try {
    return form_from_json(read_json_file(path));
  } catch (const ValidationError& ex) {
    throw ValidationError(path.string() + ": " + ex.what());
  } catch (const FormatError& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
}

inline void save_form(const std::filesystem::path& path, const Form& form) {
  write_json_file(path, to_json(form));
}

/// Model output for one form. `types` is parallel to the form's element list;
/// entries are empty when the task has no type head.
struct Prediction {
  std::string form;
  std::vector<std::string> types;
  std::vector<GroupSet> groups;
};

inline json to_json(const Prediction& p) {
  json groups = json::array();
  for (const auto& g : p.groups) groups.push_back(to_json(g));
  json types = json::array();
  for (const auto& t : p.types) types.push_back(t.empty() ? json(nullptr) : json(t));
  return {{"form", p.form}, {"types", types}, {"groups", groups}};
}

inline Prediction prediction_from_json(const json& j) {
  detail::require_keys(j, {"form", "types", "groups"}, "prediction");
  Prediction p;
  try {
    p.form = detail::need(j, "form", "prediction").get<std::string>();
    for (const auto& t : detail::need(j, "types", "prediction"))
      p.types.push_back(t.is_null() ? std::string() : t.get<std::string>());
    for (const auto& g : detail::need(j, "groups", "prediction")) p.groups.push_back(group_from_json(g));
  } catch (const json::exception& ex) {
    throw FormatError(std::string("prediction: ") + ex.what());
  }
  return p;
}

}  // namespace form2seq
