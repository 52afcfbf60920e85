#pragma once

// Synthetic labeled forms and tables. Output is fully determined by the
// parameters (including the seed).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "form2seq/docmodel.hpp"
#include "form2seq/form_io.hpp"
#include "form2seq/nncore.hpp"

namespace form2seq {

class LayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct GenParams {
  std::uint64_t seed = 1;
  double page_w = 792;
  double page_h = 792;
  IntRange headers{1, 1};
  IntRange sections{1, 3};
  IntRange text_fields{3, 8};
  IntRange choice_groups{1, 3};
  IntRange choice_fields{2, 4};  // per choice group
  IntRange bullet_lists{0, 2};
  IntRange bullet_items{2, 4};  // per list
  IntRange static_paragraphs{1, 3};
  int columns = 0;  // 1, 2, or 0 for a per-form draw
  double two_column_prob = 0.25;
  double title_prob = 0.8;  // a choice group has a title
  double noise_rate = 0.03;
  double density = 1.0;  // all gaps scale with 1/density
};

struct TableParams {
  std::uint64_t seed = 1;
  double page_w = 792;
  double page_h = 792;
  IntRange rows{3, 8};
  IntRange cols{2, 6};
  double jitter = 2.0;
  double multiline_prob = 0.1;
  double missing_prob = 0.05;
  double noise_rate = 0.0;
};

namespace synth {

inline constexpr double kMargin = 36;
inline constexpr double kColumnGap = 24;
inline constexpr double kLine = 12;

inline constexpr std::array<std::string_view, 12> kHeaderWords = {
    "APPLICATION", "FORM",       "Patient",     "Registration", "Employee", "Enrollment",
    "REQUEST",     "Insurance",  "Claim",       "Vehicle",      "Permit",   "Renewal"};
inline constexpr std::array<std::string_view, 10> kSectionTopics = {
    "Personal Information", "Employment Details", "Contact Details", "Medical History", "Vehicle Information",
    "Payment",              "Declaration",        "Coverage",        "Dependents",      "Office Use Only"};
inline constexpr std::array<std::string_view, 24> kCaptionWords = {
    "Name",    "First",   "Last",  "Date",  "of",       "Birth",    "Address", "City",
    "State",   "Zip",     "Phone", "Email", "Signature", "Employer", "Policy",  "Number",
    "Account", "Amount",  "SSN",   "Title", "County",   "Country",  "Fax",     "ID"};
inline constexpr std::array<std::string_view, 16> kChoiceTitles = {
    "Marital", "Status",  "Gender",  "Do",     "you",   "smoke?", "Select", "one",
    "Check",   "all",     "that",    "apply:", "Plan",  "type",   "Have",   "insurance?"};
inline constexpr std::array<std::string_view, 18> kChoiceCaptions = {
    "Yes",    "No",      "Male",   "Female", "Married", "Single", "Divorced", "Other", "Monthly",
    "Weekly", "Annual",  "Basic",  "Premium", "Full",   "Part",   "Cash",     "Check", "N/A"};
inline constexpr std::array<std::string_view, 40> kProseWords = {
    "please",  "read",    "the",      "following", "instructions", "carefully", "before",  "completing",
    "this",    "form",    "all",      "information", "must",       "be",        "provided", "and",
    "signed",  "by",      "applicant", "any",      "false",       "statement", "may",      "result",
    "in",      "denial",  "of",       "coverage",  "attach",      "copies",    "receipts", "if",
    "you",     "are",     "not",      "sure",      "contact",     "our",       "office",   "today"};
inline constexpr std::array<std::string_view, 5> kBulletStyles = {"•", "-", "a)", "1.", "(i)"};

inline std::string pick(nn::Rng& rng, std::span<const std::string_view> words) {
  return std::string(words[rng.index(words.size())]);
}

inline std::string noisy(std::string word, nn::Rng& rng, double rate) {
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  for (auto& c : word)
    if (rng.bernoulli(rate)) c = kAlphabet[rng.index(kAlphabet.size())];
  return word;
}

inline double text_width(const std::vector<std::string>& words, double char_w) {
  std::size_t chars = 0;
  for (const auto& w : words) chars += w.size() + 1;
  return std::max(8.0, static_cast<double>(chars) * char_w);
}

inline std::string bullet_label(std::string_view style, int k) {
  if (style == "a)") return std::string(1, static_cast<char>('a' + k % 26)) + ")";
  if (style == "1.") return std::to_string(k + 1) + ".";
  if (style == "(i)") {
    static constexpr std::array<std::string_view, 8> kRoman = {"(i)", "(ii)", "(iii)", "(iv)", "(v)", "(vi)", "(vii)", "(viii)"};
    return std::string(kRoman[static_cast<std::size_t>(k) % kRoman.size()]);
  }
  return std::string(style);
}

/// An element positioned relative to its block, with group tags local to the
/// block (-1 when absent).
struct Piece {
  ElementKind kind = ElementKind::TextBlock;
  BBox box;
  std::vector<std::string> words;
  TypeClass type = TypeClass::StaticText;
  int field = -1;         // local TextField / ChoiceField index
  bool field_is_choice = false;
  bool in_choice_group = false;
};

struct Block {
  std::vector<Piece> pieces;
  double height = 0;
  bool full_width = false;
};

inline void finish(Block& b) {
  double h = 0;
  for (const auto& p : b.pieces) h = std::max(h, p.box.bottom());
  b.height = h;
}

/// Layout planner; every random draw happens here in a fixed sequence that
/// does not depend on gap sizes.
class FormBuilder {
 public:
  FormBuilder(const GenParams& p, nn::Rng& rng, double width) : p_(p), rng_(rng), cw_(width) {}

  double gap(double lo, double hi) { return rng_.uniform(lo, hi) / p_.density; }

  std::vector<std::string> words(std::span<const std::string_view> vocab, int lo, int hi) {
    std::vector<std::string> out;
    const int n = rng_.range(lo, hi);
    for (int i = 0; i < n; ++i) out.push_back(noisy(pick(rng_, vocab), rng_, p_.noise_rate));
    return out;
  }

  Block header() {
    Block b;
    b.full_width = true;
    auto w = words(kHeaderWords, 2, 4);
    const double width = std::min(text_width(w, 11), p_.page_w - 2 * kMargin);
    const double x = (p_.page_w - 2 * kMargin - width) / 2;
    b.pieces.push_back({ElementKind::TextBlock, {x, 0, width, 22}, w, TypeClass::HeaderTitle});
    finish(b);
    return b;
  }

  Block section(int number) {
    Block b;
    std::vector<std::string> w;
    const int style = rng_.range(0, 2);
    if (style == 0) {
      w.push_back(noisy("Section", rng_, p_.noise_rate));
      w.push_back(std::to_string(number) + ":");
    } else if (style == 1) {
      w.push_back(noisy("Part", rng_, p_.noise_rate));
      w.push_back(std::string(1, static_cast<char>('A' + number - 1)));
    }
    for (const auto& t : tokenize_topic(pick(rng_, kSectionTopics))) w.push_back(noisy(t, rng_, p_.noise_rate));
    const double width = std::min(text_width(w, 8), cw_);
    b.pieces.push_back({ElementKind::TextBlock, {0, 0, width, 15}, w, TypeClass::SectionTitle});
    finish(b);
    return b;
  }

  /// One or two text fields on a row.
  Block text_fields(int count) {
    Block b;
    const double slot = cw_ / count;
    for (int f = 0; f < count; ++f) {
      const double x0 = f * slot;
      auto caption = words(kCaptionWords, 1, 3);
      if (rng_.bernoulli(0.5)) caption.back() += ":";
      const double cwid = std::min(text_width(caption, 6), slot * 0.45);
      const int mode = rng_.bernoulli(0.6) ? 0 : (rng_.bernoulli(0.75) ? 1 : 2);
      const double hgap = gap(6, 14);
      const double vgap = gap(3, 6);
      const double wfrac = rng_.uniform(0.35, 0.9);
      b.pieces.push_back({ElementKind::TextBlock, {x0, 3, cwid, kLine}, caption, TypeClass::TextFieldCaption, f});
      if (mode == 0) {
        const double avail = slot - cwid - hgap - 8;
        b.pieces.push_back({ElementKind::Widget, {x0 + cwid + hgap, 0, std::max(30.0, avail * wfrac), 18}, {},
                            TypeClass::TextWidget, f});
      } else if (mode == 1) {
        b.pieces.push_back({ElementKind::Widget, {x0, 3 + kLine + vgap, std::max(40.0, (slot - 8) * wfrac), 18}, {},
                            TypeClass::TextWidget, f});
      } else {
        const int parts = rng_.range(2, 3);
        double x = x0 + cwid + hgap;
        for (int k = 0; k < parts; ++k) {
          b.pieces.push_back({ElementKind::Widget, {x, 0, 30, 18}, {}, TypeClass::TextWidget, f});
          x += 30 + gap(4, 8);
        }
      }
    }
    finish(b);
    return b;
  }

  Block choice_group(int fields) {
    Block b;
    const bool titled = rng_.bernoulli(p_.title_prob);
    const bool vertical = rng_.bernoulli(0.4);
    const bool inline_title = !vertical && rng_.bernoulli(0.3);
    const bool caption_left = rng_.bernoulli(0.2);
    const double side = rng_.uniform(8, 13);
    double y = 0, x = 0;
    if (titled) {
      auto title = words(kChoiceTitles, 2, 4);
      const double tw = std::min(text_width(title, 6), cw_ * (inline_title ? 0.4 : 0.9));
      const double after = gap(8, 16);
      const double below = gap(3, 10);
      b.pieces.push_back({ElementKind::TextBlock, {0, 0, tw, kLine}, title, TypeClass::ChoiceGroupTitle});
      b.pieces.back().in_choice_group = true;
      if (inline_title)
        x = tw + after;
      else
        y = kLine + below;
    }
    const double indent = vertical ? 12 : 0;
    if (!inline_title) x = indent;
    for (int f = 0; f < fields; ++f) {
      auto caption = words(kChoiceCaptions, 1, 2);
      const double cwid = text_width(caption, 6);
      const double inner = gap(3, 6);
      const double between = gap(12, 20);
      const double row_gap = gap(3, 8);
      const double fw = side + inner + cwid;
      if (!vertical && x + fw > cw_ && x > indent) {
        x = indent;
        y += kLine + row_gap;
      }
      Piece box{ElementKind::Widget, {0, y + std::max(0.0, (kLine - side) / 2), side, side}, {}, TypeClass::ChoiceWidget, f, true, true};
      Piece cap{ElementKind::TextBlock, {0, y, std::min(cwid, cw_ - 20), kLine}, caption, TypeClass::ChoiceCaption, f,
                true, true};
      if (caption_left) {
        cap.box.x = x;
        box.box.x = x + cap.box.w + inner;
      } else {
        box.box.x = x;
        cap.box.x = x + side + inner;
      }
      b.pieces.push_back(box);
      b.pieces.push_back(cap);
      if (vertical) {
        y += kLine + row_gap;
      } else {
        x += fw + between;
      }
    }
    finish(b);
    return b;
  }

  Block bullet_list(int items) {
    Block b;
    const auto style = kBulletStyles[rng_.index(kBulletStyles.size())];
    const double indent = rng_.uniform(4, 16);
    double y = 0;
    for (int k = 0; k < items; ++k) {
      const std::string label = bullet_label(style, k);
      const double bw = std::max(6.0, static_cast<double>(label.size()) * 5);
      const int lines = rng_.bernoulli(0.3) ? 2 : 1;
      auto text = words(kProseWords, 3 * lines, 7 * lines);
      const double tx = indent + bw + gap(4, 8);
      const double h = lines * kLine + (lines - 1) * 2;
      const double tw = std::min(text_width(text, 5.5) / lines, cw_ - tx);
      const double row_gap = gap(3, 6);
      b.pieces.push_back({ElementKind::TextBlock, {indent, y, bw, kLine}, {label}, TypeClass::Bullet});
      b.pieces.push_back({ElementKind::TextBlock, {tx, y, std::max(20.0, tw), h}, text, TypeClass::ListItem});
      y += h + row_gap;
    }
    finish(b);
    return b;
  }

  Block paragraph() {
    Block b;
    const int lines = rng_.range(1, 3);
    auto text = words(kProseWords, 6 * lines, 11 * lines);
    const double w = cw_ * rng_.uniform(0.6, 1.0);
    b.pieces.push_back({ElementKind::TextBlock, {0, 0, w, lines * kLine + (lines - 1) * 2.0}, text,
                        TypeClass::StaticText});
    finish(b);
    return b;
  }

 private:
  static std::vector<std::string> tokenize_topic(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ' ') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  const GenParams& p_;
  nn::Rng& rng_;
  double cw_;
};

inline void check_range(IntRange r, const char* name, int min_lo = 0) {
  if (r.lo < min_lo || r.hi < r.lo)
    throw std::invalid_argument(std::string("GenParams.") + name + ": invalid range [" + std::to_string(r.lo) + ", " +
                                std::to_string(r.hi) + "]");
}

struct Plan {
  std::vector<Block> blocks;
  std::vector<double> gaps;  // gap before each block (unscaled draw / density)
  int columns = 1;
};

inline Plan plan_form(const GenParams& p, nn::Rng& rng) {
  Plan plan;
  plan.columns = p.columns == 0 ? (rng.bernoulli(p.two_column_prob) ? 2 : 1) : p.columns;
  const double usable = p.page_w - 2 * kMargin;
  const double cw = plan.columns == 2 ? (usable - kColumnGap) / 2 : usable;
  FormBuilder fb(p, rng, cw);

  const int headers = rng.range(p.headers.lo, p.headers.hi);
  const int sections = rng.range(p.sections.lo, p.sections.hi);
  const int tfs = rng.range(p.text_fields.lo, p.text_fields.hi);
  const int cgs = rng.range(p.choice_groups.lo, p.choice_groups.hi);
  const int lists = rng.range(p.bullet_lists.lo, p.bullet_lists.hi);
  const int paras = rng.range(p.static_paragraphs.lo, p.static_paragraphs.hi);

  enum Kind { TF, CG, BL, SP };
  std::vector<Kind> body;
  for (int i = 0; i < cgs; ++i) body.push_back(CG);
  for (int i = 0; i < lists; ++i) body.push_back(BL);
  for (int i = 0; i < paras; ++i) body.push_back(SP);
  // Text fields may share a row in single-column layouts.
  int remaining = tfs;
  std::vector<int> tf_rows;
  while (remaining > 0) {
    const int n = (plan.columns == 1 && remaining >= 2 && rng.bernoulli(0.3)) ? 2 : 1;
    tf_rows.push_back(n);
    remaining -= n;
  }
  for (std::size_t i = 0; i < tf_rows.size(); ++i) body.push_back(TF);
  rng.shuffle(body.begin(), body.end());

  std::vector<std::size_t> section_at;
  for (int s = 0; s < sections; ++s) section_at.push_back(rng.index(body.size() + 1));
  std::sort(section_at.begin(), section_at.end());

  for (int h = 0; h < headers; ++h) {
    plan.blocks.push_back(fb.header());
    plan.gaps.push_back(fb.gap(8, 14));
  }
  std::size_t next_section = 0, tf_row = 0;
  int section_no = 1;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    while (next_section < section_at.size() && section_at[next_section] == i) {
      plan.blocks.push_back(fb.section(section_no++));
      plan.gaps.push_back(fb.gap(6, 18));
      ++next_section;
    }
    if (i == body.size()) break;
    switch (body[i]) {
      case TF: plan.blocks.push_back(fb.text_fields(tf_rows[tf_row++])); break;
      case CG: plan.blocks.push_back(fb.choice_group(rng.range(p.choice_fields.lo, p.choice_fields.hi))); break;
      case BL: plan.blocks.push_back(fb.bullet_list(rng.range(p.bullet_items.lo, p.bullet_items.hi))); break;
      case SP: plan.blocks.push_back(fb.paragraph()); break;
    }
    plan.gaps.push_back(fb.gap(4, 16));
  }
  return plan;
}

}  // namespace synth

/// Generates one fully labeled form. Throws LayoutError when the requested
/// constructs do not fit even after tightening the spacing.
inline Form gen_form(const GenParams& params) {
  using namespace synth;
  check_range(params.headers, "headers");
  check_range(params.sections, "sections");
  check_range(params.text_fields, "text_fields");
  check_range(params.choice_groups, "choice_groups");
  check_range(params.choice_fields, "choice_fields", 2);
  check_range(params.bullet_lists, "bullet_lists");
  check_range(params.bullet_items, "bullet_items", 1);
  check_range(params.static_paragraphs, "static_paragraphs");
  if (params.noise_rate < 0 || params.noise_rate > 1) throw std::invalid_argument("GenParams.noise_rate outside [0,1]");
  if (!(params.density > 0)) throw std::invalid_argument("GenParams.density must be positive");
  if (params.columns < 0 || params.columns > 2) throw std::invalid_argument("GenParams.columns must be 0, 1 or 2");

  GenParams p = params;
  const double usable_h = p.page_h - 2 * kMargin;
  for (int attempt = 0;; ++attempt) {
    nn::Rng rng(p.seed);
    Plan plan = plan_form(p, rng);
    const double usable_w = p.page_w - 2 * kMargin;
    const double cw = plan.columns == 2 ? (usable_w - kColumnGap) / 2 : usable_w;

    // Stack blocks; two-column pages split the body at the height midpoint.
    double full = 0, body_total = 0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
      const double h = plan.blocks[i].height + plan.gaps[i];
      (plan.blocks[i].full_width ? full : body_total) += h;
    }
    std::vector<std::pair<int, double>> place(plan.blocks.size());  // column, y
    double y_full = 0;
    double col_y[2] = {0, 0};
    double needed = 0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
      const auto& b = plan.blocks[i];
      if (b.full_width) {
        place[i] = {0, y_full};
        y_full += b.height + plan.gaps[i];
        col_y[0] = col_y[1] = y_full;
        continue;
      }
      int col = 0;
      if (plan.columns == 2 && col_y[0] - y_full + b.height / 2 > body_total / 2) col = 1;
      place[i] = {col, col_y[col]};
      col_y[col] += b.height + plan.gaps[i];
      needed = std::max(needed, col_y[col] - plan.gaps[i]);
    }
    needed = std::max(needed, y_full);
    if (needed > usable_h) {
      if (attempt < 4) {
        p.density *= 1.25;
        continue;
      }
      throw LayoutError("layout infeasible: content needs " + std::to_string(static_cast<int>(needed)) +
                        " px of height but the page offers " + std::to_string(static_cast<int>(usable_h)) + " px");
    }

    Form form;
    form.page_w = p.page_w;
    form.page_h = p.page_h;
    int next_id = 0;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
      const auto& b = plan.blocks[i];
      const double x0 = kMargin + (place[i].first == 1 ? cw + kColumnGap : 0);
      const double y0 = kMargin + place[i].second;
      std::map<int, std::set<int>> fields;
      std::set<int> group;
      bool choice_fields = false;
      for (const auto& piece : b.pieces) {
        Element e;
        e.id = next_id++;
        e.kind = piece.kind;
        e.bbox = {x0 + piece.box.x, y0 + piece.box.y, piece.box.w, piece.box.h};
        e.words = piece.words;
        e.gold_type = piece.type;
        if (piece.field >= 0) fields[piece.field].insert(e.id);
        choice_fields = choice_fields || piece.field_is_choice;
        if (piece.in_choice_group) group.insert(e.id);
        form.elements.push_back(std::move(e));
      }
      for (auto& [k, members] : fields)
        form.gold_groups.push_back({choice_fields ? GroupKind::ChoiceField : GroupKind::TextField, members});
      if (!group.empty()) form.gold_groups.push_back({GroupKind::ChoiceGroup, group});
    }
    validate(form);
    return form;
  }
}

/// Grid of text cells with row and column groups.
inline Form gen_table(const TableParams& p) {
  using namespace synth;
  if (p.rows.lo < 2 || p.cols.lo < 2 || p.rows.hi < p.rows.lo || p.cols.hi < p.cols.lo)
    throw std::invalid_argument("TableParams: rows and cols need ranges with lo >= 2");
  if (p.multiline_prob < 0 || p.multiline_prob > 1 || p.missing_prob < 0 || p.missing_prob > 1)
    throw std::invalid_argument("TableParams: probabilities must lie in [0,1]");
  static constexpr std::array<std::string_view, 12> kHeads = {"Year", "Revenue", "Total", "Country", "Region", "Units",
                                                              "Price", "Change", "Q1", "Q2", "Share", "Notes"};
  static constexpr std::array<std::string_view, 10> kCells = {"n/a", "total", "est.", "approx", "none",
                                                              "see", "note", "incl.", "excl.", "avg"};
  nn::Rng rng(p.seed);
  const int rows = rng.range(p.rows.lo, p.rows.hi);
  const int cols = rng.range(p.cols.lo, p.cols.hi);
  std::vector<double> col_x(static_cast<std::size_t>(cols)), col_w(static_cast<std::size_t>(cols));
  double x = kMargin;
  for (int c = 0; c < cols; ++c) {
    col_w[static_cast<std::size_t>(c)] = rng.uniform(50, 110);
    col_x[static_cast<std::size_t>(c)] = x;
    x += col_w[static_cast<std::size_t>(c)] + rng.uniform(16, 24) + 2 * p.jitter;
  }
  if (x - kMargin > p.page_w) throw LayoutError("layout infeasible: table columns exceed the page width");

  Form form;
  form.page_w = p.page_w;
  form.page_h = p.page_h;
  std::vector<std::set<int>> row_sets(static_cast<std::size_t>(rows)), col_sets(static_cast<std::size_t>(cols));
  double y = kMargin;
  int next_id = 0;
  auto cell_words = [&](int r) {
    std::vector<std::string> w;
    if (r == 0) {
      w.push_back(pick(rng, kHeads));
    } else if (rng.bernoulli(0.7)) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.*f", static_cast<int>(rng.range(0, 2)), rng.uniform(0, 5000));
      w.emplace_back(buf);
    } else {
      w.push_back(pick(rng, kCells));
    }
    for (auto& s : w) s = noisy(s, rng, p.noise_rate);
    return w;
  };
  for (int r = 0; r < rows; ++r) {
    std::vector<int> lines(static_cast<std::size_t>(cols));
    std::vector<bool> missing(static_cast<std::size_t>(cols));
    for (int c = 0; c < cols; ++c) {
      lines[static_cast<std::size_t>(c)] = rng.bernoulli(p.multiline_prob) ? 2 : 1;
      missing[static_cast<std::size_t>(c)] = rng.bernoulli(p.missing_prob);
    }
    int row_lines = 1;
    for (int c = 0; c < cols; ++c)
      if (!missing[static_cast<std::size_t>(c)]) row_lines = std::max(row_lines, lines[static_cast<std::size_t>(c)]);
    for (int c = 0; c < cols; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      if (missing[ci]) continue;
      for (int l = 0; l < lines[ci]; ++l) {
        Element e;
        e.id = next_id++;
        e.words = cell_words(r);
        const double w = std::min(col_w[ci], std::max(10.0, synth::text_width(e.words, 6)));
        e.bbox = {col_x[ci] + rng.uniform(-p.jitter, p.jitter), y + l * (kLine + 2) + rng.uniform(-p.jitter, p.jitter),
                  w, kLine};
        e.bbox.x = std::max(0.0, e.bbox.x);
        e.bbox.y = std::max(0.0, e.bbox.y);
        row_sets[static_cast<std::size_t>(r)].insert(e.id);
        col_sets[ci].insert(e.id);
        form.elements.push_back(std::move(e));
      }
    }
    y += row_lines * (kLine + 2) + rng.uniform(6, 10) + 2 * p.jitter;
  }
  if (y > p.page_h) throw LayoutError("layout infeasible: table rows exceed the page height");
  for (auto& s : row_sets)
    if (!s.empty()) form.gold_groups.push_back({GroupKind::TableRow, s});
  for (auto& s : col_sets)
    if (!s.empty()) form.gold_groups.push_back({GroupKind::TableColumn, s});
  validate(form);
  return form;
}

// ---------------------------------------------------------------------------

inline json to_json(const IntRange& r) { return json::array({r.lo, r.hi}); }

inline json to_json(const GenParams& p) {
  return {{"seed", p.seed},
          {"page_w", p.page_w},
          {"page_h", p.page_h},
          {"headers", to_json(p.headers)},
          {"sections", to_json(p.sections)},
          {"text_fields", to_json(p.text_fields)},
          {"choice_groups", to_json(p.choice_groups)},
          {"choice_fields", to_json(p.choice_fields)},
          {"bullet_lists", to_json(p.bullet_lists)},
          {"bullet_items", to_json(p.bullet_items)},
          {"static_paragraphs", to_json(p.static_paragraphs)},
          {"columns", p.columns},
          {"two_column_prob", p.two_column_prob},
          {"title_prob", p.title_prob},
          {"noise_rate", p.noise_rate},
          {"density", p.density}};
}

inline json to_json(const TableParams& p) {
  return {{"seed", p.seed},         {"page_w", p.page_w},
          {"page_h", p.page_h},     {"rows", to_json(p.rows)},
          {"cols", to_json(p.cols)}, {"jitter", p.jitter},
          {"multiline_prob", p.multiline_prob}, {"missing_prob", p.missing_prob},
          {"noise_rate", p.noise_rate}};
}

namespace synth {
inline IntRange range_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw FormatError("range must be [lo, hi]");
  return {j[0].get<int>(), j[1].get<int>()};
}
}  // namespace synth

inline GenParams gen_params_from_json(const json& j) {
  detail::require_keys(j,
                       {"seed", "page_w", "page_h", "headers", "sections", "text_fields", "choice_groups",
                        "choice_fields", "bullet_lists", "bullet_items", "static_paragraphs", "columns",
                        "two_column_prob", "title_prob", "noise_rate", "density"},
                       "generator params");
  GenParams p;
  if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("page_w")) p.page_w = j["page_w"].get<double>();
  if (j.contains("page_h")) p.page_h = j["page_h"].get<double>();
  auto range = [&](const char* k, IntRange& r) {
    if (j.contains(k)) r = synth::range_from_json(j[k]);
  };
  range("headers", p.headers);
  range("sections", p.sections);
  range("text_fields", p.text_fields);
  range("choice_groups", p.choice_groups);
  range("choice_fields", p.choice_fields);
  range("bullet_lists", p.bullet_lists);
  range("bullet_items", p.bullet_items);
  range("static_paragraphs", p.static_paragraphs);
  if (j.contains("columns")) p.columns = j["columns"].get<int>();
  if (j.contains("two_column_prob")) p.two_column_prob = j["two_column_prob"].get<double>();
  if (j.contains("title_prob")) p.title_prob = j["title_prob"].get<double>();
  if (j.contains("noise_rate")) p.noise_rate = j["noise_rate"].get<double>();
  if (j.contains("density")) p.density = j["density"].get<double>();
  return p;
}

inline TableParams table_params_from_json(const json& j) {
  detail::require_keys(j,
                       {"seed", "page_w", "page_h", "rows", "cols", "jitter", "multiline_prob", "missing_prob",
                        "noise_rate"},
                       "table params");
  TableParams p;
  if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("page_w")) p.page_w = j["page_w"].get<double>();
  if (j.contains("page_h")) p.page_h = j["page_h"].get<double>();
  if (j.contains("rows")) p.rows = synth::range_from_json(j["rows"]);
  if (j.contains("cols")) p.cols = synth::range_from_json(j["cols"]);
  if (j.contains("jitter")) p.jitter = j["jitter"].get<double>();
  if (j.contains("multiline_prob")) p.multiline_prob = j["multiline_prob"].get<double>();
  if (j.contains("missing_prob")) p.missing_prob = j["missing_prob"].get<double>();
  if (j.contains("noise_rate")) p.noise_rate = j["noise_rate"].get<double>();
  return p;
}

/// Per-item seed: splitmix64 of (base, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct SplitSizes {
  int train = 500;
  int dev = 50;
  int test = 100;
};

/// Writes <dir>/<split>/<name>.json for every form plus <dir>/manifest.json
/// listing split membership with the per-form seeds. Tables replace forms
/// when `table` is set.
inline json gen_corpus(const std::filesystem::path& dir, const GenParams& base, const SplitSizes& sizes,
                       const std::optional<TableParams>& table = std::nullopt) {
  namespace fs = std::filesystem;
  json manifest;
  manifest["kind"] = table ? "table" : "form";
  manifest["params"] = table ? to_json(*table) : to_json(base);
  manifest["splits"] = json::object();
  const std::pair<const char*, int> splits[] = {{"train", sizes.train}, {"dev", sizes.dev}, {"test", sizes.test}};
  std::uint64_t index = 0;
  for (const auto& [split, n] : splits) {
    fs::create_directories(dir / split);
    json entries = json::array();
    for (int i = 0; i < n; ++i, ++index) {
      const std::uint64_t seed = derive_seed(table ? table->seed : base.seed, index);
      char name[32];
      std::snprintf(name, sizeof name, "%s_%05d", split, i);
      Form f;
      if (table) {
        TableParams tp = *table;
        tp.seed = seed;
        f = gen_table(tp);
      } else {
        GenParams gp = base;
        gp.seed = seed;
        f = gen_form(gp);
      }
      const std::string file = std::string(split) + "/" + name + ".json";
      save_form(dir / file, f);
      entries.push_back({{"file", file}, {"seed", seed}});
    }
    manifest["splits"][split] = entries;
  }
  write_json_file(dir / "manifest.json", manifest);
  return manifest;
}

/// Loads one split listed in a corpus manifest.
inline std::vector<NamedForm> load_split(const std::filesystem::path& dir, const std::string& split) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.contains("splits") || !manifest["splits"].contains(split))
    throw FormatError((dir / "manifest.json").string() + ": no split '" + split + "'");
  std::vector<NamedForm> out;
  for (const auto& e : manifest["splits"][split]) {
    const std::string file = e.at("file").get<std::string>();
    out.push_back({std::filesystem::path(file).stem().string(), load_form(dir / file)});
  }
  return out;
}

}  // namespace form2seq
