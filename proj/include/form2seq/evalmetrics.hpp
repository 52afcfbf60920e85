#pragma once

// Evaluation: per-class type accuracy, exact element-set group matching and
// IoU-threshold box matching, with count-based aggregation across forms.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "form2seq/docmodel.hpp"
#include "form2seq/form_io.hpp"

namespace form2seq {

/// Precision/recall/F from match counts. P = 0 when nothing was predicted,
/// R = 0 when nothing was expected, F = 0 when P + R = 0.
struct PrfCounts {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  double precision() const { return predicted ? static_cast<double>(matched) / static_cast<double>(predicted) : 0.0; }
  double recall() const { return gold ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  PrfCounts& operator+=(const PrfCounts& o) {
    matched += o.matched;
    predicted += o.predicted;
    gold += o.gold;
    return *this;
  }
};

/// Exact-set matching: a prediction matches a gold group iff their member
/// sets are equal. Sets within each list are assumed pairwise distinct, so
/// the one-to-one matching is unique.
inline PrfCounts group_prf(std::span<const GroupSet> pred, std::span<const GroupSet> gold) {
  std::multiset<std::set<int>> remaining;
  for (const auto& g : gold) remaining.insert(g.members);
  PrfCounts c{0, pred.size(), gold.size()};
  for (const auto& p : pred) {
    auto it = remaining.find(p.members);
    if (it != remaining.end()) {
      ++c.matched;
      remaining.erase(it);
    }
  }
  return c;
}

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Smallest box covering every member.
inline BBox union_bbox(std::span<const BBox> boxes) {
  if (boxes.empty()) throw std::invalid_argument("union_bbox: no members");
  double x0 = boxes[0].x, y0 = boxes[0].y, x1 = boxes[0].right(), y1 = boxes[0].bottom();
  for (const auto& b : boxes) {
    x0 = std::min(x0, b.x);
    y0 = std::min(y0, b.y);
    x1 = std::max(x1, b.right());
    y1 = std::max(y1, b.bottom());
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

inline BBox union_bbox(const Form& form, const GroupSet& g) {
  std::vector<BBox> boxes;
  for (int m : g.members) boxes.push_back(form.by_id(m).bbox);
  return union_bbox(boxes);
}

/// One-to-one box matching: pairs with IoU >= threshold are taken greedily in
/// descending IoU order, then augmenting paths raise the matching to maximum
/// cardinality. Returns the matched count with list sizes.
inline PrfCounts iou_match(std::span<const BBox> pred, std::span<const BBox> gold, double threshold = 0.4) {
  const std::size_t np = pred.size(), ng = gold.size();
  std::vector<std::vector<std::size_t>> adj(np);
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < np; ++i)
    for (std::size_t j = 0; j < ng; ++j) {
      const double v = iou(pred[i], gold[j]);
      if (v >= threshold) {
        pairs.push_back({v, i, j});
        adj[i].push_back(j);
      }
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> match_p(np, kFree), match_g(ng, kFree);
  for (const auto& pr : pairs)
    if (match_p[pr.p] == kFree && match_g[pr.g] == kFree) {
      match_p[pr.p] = pr.g;
      match_g[pr.g] = pr.p;
    }
  std::vector<char> seen;
  std::function<bool(std::size_t)> augment = [&](std::size_t p) {
    for (std::size_t g : adj[p]) {
      if (seen[g]) continue;
      seen[g] = 1;
      if (match_g[g] == kFree || augment(match_g[g])) {
        match_p[p] = g;
        match_g[g] = p;
        return true;
      }
    }
    return false;
  };
  for (std::size_t p = 0; p < np; ++p) {
    if (match_p[p] != kFree) continue;
    seen.assign(ng, 0);
    augment(p);
  }
  PrfCounts c{0, np, ng};
  for (auto m : match_p) c.matched += m != kFree ? 1 : 0;
  return c;
}

/// Correct/total counts per class name.
struct TypeCounts {
  std::map<std::string, std::size_t> correct;
  std::map<std::string, std::size_t> total;

  void add(const std::string& pred, const std::string& gold) {
    ++total[gold];
    if (pred == gold) ++correct[gold];
  }
  TypeCounts& operator+=(const TypeCounts& o) {
    for (const auto& [k, v] : o.correct) correct[k] += v;
    for (const auto& [k, v] : o.total) total[k] += v;
    return *this;
  }
  std::size_t all_total() const {
    std::size_t n = 0;
    for (const auto& [k, v] : total) n += v;
    return n;
  }
  std::size_t all_correct() const {
    std::size_t n = 0;
    for (const auto& [k, v] : correct) n += v;
    return n;
  }
  double overall() const { return all_total() ? static_cast<double>(all_correct()) / static_cast<double>(all_total()) : 0.0; }
  /// Absent when the class has no gold instance.
  std::optional<double> per_class(const std::string& cls) const {
    auto it = total.find(cls);
    if (it == total.end() || it->second == 0) return std::nullopt;
    auto c = correct.find(cls);
    return static_cast<double>(c == correct.end() ? 0 : c->second) / static_cast<double>(it->second);
  }
};

/// Aligned label sequences -> counts; throws on length mismatch.
inline TypeCounts type_accuracy(std::span<const std::string> preds, std::span<const std::string> golds) {
  if (preds.size() != golds.size()) throw std::invalid_argument("type_accuracy: sequences differ in length");
  TypeCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) c.add(preds[i], golds[i]);
  return c;
}

// ---------------------------------------------------------------------------

enum class TypeScheme { Full, Reduced };

/// Reduced when any label only exists in the six-class scheme.
inline TypeScheme detect_scheme(std::span<const std::string> labels) {
  for (const auto& l : labels)
    if (l == "ChoiceFieldCaption" || l == "OtherTextBlock") return TypeScheme::Reduced;
  return TypeScheme::Full;
}

struct MetricsReport {
  double iou_threshold = 0.4;
  std::optional<TypeScheme> scheme;
  TypeCounts types;
  std::map<GroupKind, PrfCounts> exact;
  std::map<GroupKind, PrfCounts> by_iou;
  std::optional<std::set<GroupKind>> kinds;  // evaluated group kinds; unset = whatever either side mentions

  bool has_types() const { return types.all_total() > 0; }
};

/// Accumulates one (gold form, prediction) pair.
inline void accumulate(MetricsReport& report, const Form& gold, const Prediction& pred) {
  bool any_type = false;
  for (const auto& t : pred.types) any_type = any_type || !t.empty();
  if (any_type) {
    if (pred.types.size() != gold.elements.size())
      throw std::invalid_argument(pred.form + ": prediction has " + std::to_string(pred.types.size()) +
                                  " types for " + std::to_string(gold.elements.size()) + " elements");
    const auto scheme = detect_scheme(pred.types);
    if (!report.scheme) report.scheme = scheme;
    for (std::size_t i = 0; i < gold.elements.size(); ++i) {
      const auto& gt = gold.elements[i].gold_type;
      if (!gt) continue;
      const std::string g = *report.scheme == TypeScheme::Reduced ? std::string(to_string(reduce(*gt)))
                                                                  : std::string(to_string(*gt));
      report.types.add(pred.types[i], g);
    }
  }
  std::set<GroupKind> kinds = report.kinds.value_or(std::set<GroupKind>{});
  if (!report.kinds) {
    for (const auto& g : pred.groups) kinds.insert(g.kind);
    for (const auto& g : gold.gold_groups) kinds.insert(g.kind);
  }
  for (GroupKind k : kinds) {
    std::vector<GroupSet> p, g;
    for (const auto& s : pred.groups)
      if (s.kind == k) p.push_back(s);
    for (const auto& s : gold.gold_groups)
      if (s.kind == k) g.push_back(s);
    report.exact[k] += group_prf(p, g);
    std::vector<BBox> pb, gb;
    for (const auto& s : p) pb.push_back(union_bbox(gold, s));
    for (const auto& s : g) gb.push_back(union_bbox(gold, s));
    report.by_iou[k] += iou_match(pb, gb, report.iou_threshold);
  }
}

inline json to_json(const MetricsReport& r) {
  json j;
  j["iou_threshold"] = r.iou_threshold;
  if (r.has_types()) {
    json per = json::object();
    for (const auto& [cls, n] : r.types.total)
      if (auto a = r.types.per_class(cls)) per[cls] = 100.0 * *a;
    j["types"] = {{"scheme", r.scheme == TypeScheme::Reduced ? "reduced" : "full"},
                  {"overall", 100.0 * r.types.overall()},
                  {"elements", r.types.all_total()},
                  {"per_class", per}};
  }
  auto groups = [](const std::map<GroupKind, PrfCounts>& m) {
    json g = json::object();
    for (const auto& [k, c] : m)
      g[std::string(to_string(k))] = {{"precision", 100.0 * c.precision()},
                                      {"recall", 100.0 * c.recall()},
                                      {"f1", 100.0 * c.f1()},
                                      {"matched", c.matched},
                                      {"predicted", c.predicted},
                                      {"gold", c.gold}};
    return g;
  };
  j["groups"] = {{"exact_set", groups(r.exact)}, {"iou", groups(r.by_iou)}};
  return j;
}

/// Fixed-width text rendering: a per-class accuracy block and an R/P/F block.
inline std::string to_text(const MetricsReport& r) {
  std::ostringstream out;
  char line[160];
  if (r.has_types()) {
    out << "Element type accuracy (%)\n";
    std::vector<std::string> classes;
    if (r.scheme == TypeScheme::Reduced)
      for (auto n : kReducedTypeNames) classes.emplace_back(n);
    else
      for (auto n : kTypeNames) classes.emplace_back(n);
    for (const auto& cls : classes) {
      const auto a = r.types.per_class(cls);
      if (a)
        std::snprintf(line, sizeof line, "  %-20s %7.2f\n", cls.c_str(), 100.0 * *a);
      else
        std::snprintf(line, sizeof line, "  %-20s %7s\n", cls.c_str(), "-");
      out << line;
    }
    std::snprintf(line, sizeof line, "  %-20s %7.2f\n", "Overall", 100.0 * r.types.overall());
    out << line;
  }
  if (!r.exact.empty()) {
    std::snprintf(line, sizeof line, "Groups                   exact-set                 IoU@%.2f\n", r.iou_threshold);
    out << line;
    std::snprintf(line, sizeof line, "  %-14s %7s %7s %7s   %7s %7s %7s\n", "Construct", "R", "P", "F", "R", "P", "F");
    out << line;
    for (const auto& [k, c] : r.exact) {
      const auto& i = r.by_iou.at(k);
      std::snprintf(line, sizeof line, "  %-14s %7.2f %7.2f %7.2f   %7.2f %7.2f %7.2f\n",
                    std::string(to_string(k)).c_str(), 100 * c.recall(), 100 * c.precision(), 100 * c.f1(),
                    100 * i.recall(), 100 * i.precision(), 100 * i.f1());
      out << line;
    }
  }
  return out.str();
}

}  // namespace form2seq
