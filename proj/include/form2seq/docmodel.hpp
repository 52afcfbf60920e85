#pragma once

// Domain types for form documents, reading-order serialization and the
// group-label encoding used by the sequence models.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace form2seq {

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a form holds more groups of one kind than the id head can
/// represent.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kDefaultGroupCapacity = 64;

struct BBox {
  double x = 0;
  double y = 0;
  double w = 1;
  double h = 1;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0 && x >= 0 && y >= 0; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

enum class ElementKind { TextBlock, Widget };

// Element classes of the full type task.
enum class TypeClass {
  ChoiceWidget,
  TextWidget,
  ChoiceGroupTitle,
  ChoiceCaption,
  TextFieldCaption,
  HeaderTitle,
  SectionTitle,
  Bullet,
  ListItem,
  StaticText,
};
inline constexpr int kNumTypeClasses = 10;

// Reduced classes predicted by the first stage of the cascaded model.
enum class ReducedType {
  ChoiceGroupTitle,
  TextFieldCaption,
  ChoiceFieldCaption,
  ChoiceWidget,
  TextWidget,
  OtherTextBlock,
};
inline constexpr int kNumReducedTypes = 6;

enum class GroupKind { ChoiceGroup, TextField, ChoiceField, TableRow, TableColumn };
inline constexpr int kNumGroupKinds = 5;

inline constexpr std::array<std::string_view, kNumTypeClasses> kTypeNames = {
    "ChoiceWidget",     "TextWidget",  "ChoiceGroupTitle", "ChoiceCaption", "TextFieldCaption",
    "HeaderTitle",      "SectionTitle", "Bullet",          "ListItem",      "StaticText"};

inline constexpr std::array<std::string_view, kNumReducedTypes> kReducedTypeNames = {
    "ChoiceGroupTitle", "TextFieldCaption", "ChoiceFieldCaption",
    "ChoiceWidget",     "TextWidget",       "OtherTextBlock"};

inline constexpr std::array<std::string_view, kNumGroupKinds> kGroupKindNames = {
    "ChoiceGroup", "TextField", "ChoiceField", "TableRow", "TableColumn"};

inline std::string_view to_string(TypeClass t) { return kTypeNames[static_cast<int>(t)]; }
inline std::string_view to_string(ReducedType t) { return kReducedTypeNames[static_cast<int>(t)]; }
inline std::string_view to_string(GroupKind k) { return kGroupKindNames[static_cast<int>(k)]; }
inline std::string_view to_string(ElementKind k) {
  return k == ElementKind::TextBlock ? "textblock" : "widget";
}

namespace detail {
template <class E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == s) return static_cast<E>(i);
  return std::nullopt;
}
}  // namespace detail

inline std::optional<TypeClass> parse_type_class(std::string_view s) {
  return detail::lookup<TypeClass>(kTypeNames, s);
}
inline std::optional<ReducedType> parse_reduced_type(std::string_view s) {
  return detail::lookup<ReducedType>(kReducedTypeNames, s);
}
inline std::optional<GroupKind> parse_group_kind(std::string_view s) {
  return detail::lookup<GroupKind>(kGroupKindNames, s);
}

inline ReducedType reduce(TypeClass t) {
  switch (t) {
    case TypeClass::ChoiceWidget: return ReducedType::ChoiceWidget;
    case TypeClass::TextWidget: return ReducedType::TextWidget;
    case TypeClass::ChoiceGroupTitle: return ReducedType::ChoiceGroupTitle;
    case TypeClass::ChoiceCaption: return ReducedType::ChoiceFieldCaption;
    case TypeClass::TextFieldCaption: return ReducedType::TextFieldCaption;
    default: return ReducedType::OtherTextBlock;
  }
}

struct Element {
  int id = 0;
  ElementKind kind = ElementKind::TextBlock;
  BBox bbox;
  std::vector<std::string> words;
  std::optional<TypeClass> gold_type;

  bool is_text() const { return kind == ElementKind::TextBlock; }
};

struct GroupSet {
  GroupKind kind = GroupKind::ChoiceGroup;
  std::set<int> members;

  friend bool operator==(const GroupSet&, const GroupSet&) = default;
};

struct Form {
  double page_w = 792;
  double page_h = 792;
  std::vector<Element> elements;
  std::vector<GroupSet> gold_groups;

  const Element& by_id(int id) const {
    for (const auto& e : elements)
      if (e.id == id) return e;
    throw std::out_of_range("no element with id " + std::to_string(id));
  }

  std::vector<GroupSet> groups_of(GroupKind kind) const {
    std::vector<GroupSet> out;
    for (const auto& g : gold_groups)
      if (g.kind == kind) out.push_back(g);
    return out;
  }
};

/// Throws ValidationError naming the first violated invariant.
inline void validate(const Form& form) {
  if (!(form.page_w > 0) || !(form.page_h > 0)) throw ValidationError("page dimensions must be positive");
  std::set<int> ids;
  for (const auto& e : form.elements) {
    if (e.id < 0) throw ValidationError("negative element id " + std::to_string(e.id));
    if (!ids.insert(e.id).second) throw ValidationError("duplicate element id " + std::to_string(e.id));
    if (!e.bbox.valid()) throw ValidationError("invalid bbox on element " + std::to_string(e.id));
    if (e.kind == ElementKind::Widget && !e.words.empty())
      throw ValidationError("widget " + std::to_string(e.id) + " carries words");
  }
  std::map<GroupKind, std::set<int>> seen;
  for (const auto& g : form.gold_groups) {
    if (g.members.empty()) throw ValidationError("empty " + std::string(to_string(g.kind)) + " group");
    for (int m : g.members) {
      if (!ids.count(m))
        throw ValidationError("group member " + std::to_string(m) + " is not an element");
      if (!seen[g.kind].insert(m).second)
        throw ValidationError("element " + std::to_string(m) + " belongs to two " +
                              std::string(to_string(g.kind)) + " groups");
    }
  }
}

// Same-line relation: vertical intersection over the smaller height.
inline constexpr double kSameLineOverlap = 0.5;

inline double vertical_overlap_ratio(const BBox& a, const BBox& b) {
  const double inter = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (inter <= 0) return 0.0;
  return inter / std::min(a.h, b.h);
}

/// Left-to-right, top-to-bottom permutation of `elements`.
///
/// Lines are the connected components of the same-line relation, ordered by
/// mean top edge; inside a line elements go by left edge, then id. The result
/// depends only on the multiset of (id, bbox) pairs, not on input order.
inline std::vector<std::size_t> reading_order(std::span<const Element> elements) {
  const std::size_t n = elements.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (vertical_overlap_ratio(elements[i].bbox, elements[j].bbox) > kSameLineOverlap) {
        auto a = find(i), b = find(j);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }

  struct Line {
    double top_sum = 0;
    std::size_t count = 0;
    int min_id = 0;
    std::vector<std::size_t> members;
  };
  std::map<std::size_t, Line> by_root;
  for (std::size_t i = 0; i < n; ++i) {
    auto& line = by_root[find(i)];
    line.top_sum += elements[i].bbox.y;
    line.min_id = line.count == 0 ? elements[i].id : std::min(line.min_id, elements[i].id);
    ++line.count;
    line.members.push_back(i);
  }
  std::vector<Line> lines;
  lines.reserve(by_root.size());
  for (auto& [root, line] : by_root) lines.push_back(std::move(line));
  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    const double ma = a.top_sum / a.count, mb = b.top_sum / b.count;
    if (ma != mb) return ma < mb;
    return a.min_id < b.min_id;
  });

  std::vector<std::size_t> order;
  order.reserve(n);
  for (auto& line : lines) {
    std::sort(line.members.begin(), line.members.end(), [&](std::size_t a, std::size_t b) {
      if (elements[a].bbox.x != elements[b].bbox.x) return elements[a].bbox.x < elements[b].bbox.x;
      return elements[a].id < elements[b].id;
    });
    order.insert(order.end(), line.members.begin(), line.members.end());
  }
  return order;
}

struct NormalizedBox {
  std::array<double, 4> values{};
  bool clamped = false;
};

/// Page-relative (x, y, w, h). Out-of-page coordinates are clamped to [0, 1]
/// and flagged.
inline NormalizedBox normalize_bbox(const BBox& b, double page_w, double page_h) {
  if (!(page_w > 0) || !(page_h > 0)) throw std::invalid_argument("page dimensions must be positive");
  NormalizedBox out;
  out.values = {b.x / page_w, b.y / page_h, b.w / page_w, b.h / page_h};
  if (b.right() > page_w || b.bottom() > page_h) out.clamped = true;
  for (auto& v : out.values) {
    if (v < 0.0 || v > 1.0) out.clamped = true;
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

/// Per-position group ids along `order`. Groups whose kind is in `kinds` are
/// numbered 1..K by the first reading-order position of any member; elements
/// outside every such group get 0. Kinds passed together must not overlap.
inline std::vector<int> encode_group_labels(const Form& form, std::span<const GroupKind> kinds,
                                            std::span<const std::size_t> order,
                                            int capacity = kDefaultGroupCapacity) {
  std::map<int, std::size_t> group_of;  // element id -> gold group index
  for (std::size_t g = 0; g < form.gold_groups.size(); ++g) {
    const auto& gs = form.gold_groups[g];
    if (std::find(kinds.begin(), kinds.end(), gs.kind) == kinds.end()) continue;
    for (int m : gs.members) {
      if (!group_of.emplace(m, g).second)
        throw ValidationError("element " + std::to_string(m) + " is in two groups of the encoded kinds");
    }
  }
  std::map<std::size_t, int> number;
  std::vector<int> ids(order.size(), 0);
  for (std::size_t p = 0; p < order.size(); ++p) {
    auto it = group_of.find(form.elements.at(order[p]).id);
    if (it == group_of.end()) continue;
    auto [slot, inserted] = number.emplace(it->second, static_cast<int>(number.size()) + 1);
    if (slot->second > capacity)
      throw CapacityError("form has more than " + std::to_string(capacity) + " groups of one kind");
    ids[p] = slot->second;
  }
  return ids;
}

inline std::vector<int> encode_group_labels(const Form& form, GroupKind kind,
                                            std::span<const std::size_t> order,
                                            int capacity = kDefaultGroupCapacity) {
  const GroupKind kinds[] = {kind};
  return encode_group_labels(form, std::span<const GroupKind>(kinds), order, capacity);
}

/// One GroupSet per distinct nonzero id, in order of first appearance.
/// `element_ids[p]` names the element at position p; identity when empty.
inline std::vector<GroupSet> decode_group_labels(std::span<const int> ids, GroupKind kind,
                                                 std::span<const int> element_ids = {}) {
  if (!element_ids.empty() && element_ids.size() != ids.size())
    throw std::invalid_argument("decode_group_labels: id and element sequences differ in length");
  std::vector<GroupSet> out;
  std::map<int, std::size_t> slot;
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (ids[p] == 0) continue;
    auto [it, inserted] = slot.emplace(ids[p], out.size());
    if (inserted) out.push_back(GroupSet{kind, {}});
    out[it->second].members.insert(element_ids.empty() ? static_cast<int>(p) : element_ids[p]);
  }
  return out;
}

}  // namespace form2seq
