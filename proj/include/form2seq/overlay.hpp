#pragma once

// Prediction overlays as binary PPM images: element boxes outlined in a fixed
// color per predicted type, group extents in a fixed color per group kind,
// and a legend. Meant for offline inspection.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "form2seq/docmodel.hpp"
#include "form2seq/evalmetrics.hpp"
#include "form2seq/form_io.hpp"

namespace form2seq {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

class Image {
 public:
  Image(int w, int h, Rgb fill = {255, 255, 255})
      : w_(w), h_(h), px_(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  int width() const { return w_; }
  int height() const { return h_; }
  Rgb at(int x, int y) const { return px_[static_cast<std::size_t>(y) * static_cast<std::size_t>(w_) + static_cast<std::size_t>(x)]; }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    px_[static_cast<std::size_t>(y) * static_cast<std::size_t>(w_) + static_cast<std::size_t>(x)] = c;
  }
  void rect(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1) {
    for (int t = 0; t < thickness; ++t) {
      for (int x = x0 - t; x <= x1 + t; ++x) {
        set(x, y0 - t, c);
        set(x, y1 + t, c);
      }
      for (int y = y0 - t; y <= y1 + t; ++y) {
        set(x0 - t, y, c);
        set(x1 + t, y, c);
      }
    }
  }
  void fill(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
  }

  std::string ppm() const {
    std::string out = "P6\n" + std::to_string(w_) + " " + std::to_string(h_) + "\n255\n";
    out.reserve(out.size() + px_.size() * 3);
    for (const auto& p : px_) {
      out.push_back(static_cast<char>(p.r));
      out.push_back(static_cast<char>(p.g));
      out.push_back(static_cast<char>(p.b));
    }
    return out;
  }

 private:
  int w_, h_;
  std::vector<Rgb> px_;
};

namespace font {

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;
};

inline constexpr Glyph kGlyphs[] = {
    {'A', {14, 17, 17, 31, 17, 17, 17}}, {'B', {30, 17, 17, 30, 17, 17, 30}}, {'C', {14, 17, 16, 16, 16, 17, 14}},
    {'D', {30, 17, 17, 17, 17, 17, 30}}, {'E', {31, 16, 16, 30, 16, 16, 31}}, {'F', {31, 16, 16, 30, 16, 16, 16}},
    {'G', {14, 17, 16, 23, 17, 17, 15}}, {'H', {17, 17, 17, 31, 17, 17, 17}}, {'I', {14, 4, 4, 4, 4, 4, 14}},
    {'J', {7, 2, 2, 2, 2, 18, 12}},      {'K', {17, 18, 20, 24, 20, 18, 17}}, {'L', {16, 16, 16, 16, 16, 16, 31}},
    {'M', {17, 27, 21, 21, 17, 17, 17}}, {'N', {17, 17, 25, 21, 19, 17, 17}}, {'O', {14, 17, 17, 17, 17, 17, 14}},
    {'P', {30, 17, 17, 30, 16, 16, 16}}, {'Q', {14, 17, 17, 17, 21, 18, 13}}, {'R', {30, 17, 17, 30, 20, 18, 17}},
    {'S', {15, 16, 16, 14, 1, 1, 30}},   {'T', {31, 4, 4, 4, 4, 4, 4}},       {'U', {17, 17, 17, 17, 17, 17, 14}},
    {'V', {17, 17, 17, 17, 17, 10, 4}},  {'W', {17, 17, 17, 21, 21, 21, 10}}, {'X', {17, 17, 10, 4, 10, 17, 17}},
    {'Y', {17, 17, 10, 4, 4, 4, 4}},     {'Z', {31, 1, 2, 4, 8, 16, 31}},     {'0', {14, 17, 19, 21, 25, 17, 14}},
    {'1', {4, 12, 4, 4, 4, 4, 14}},      {'2', {14, 17, 1, 2, 4, 8, 31}},     {'3', {31, 2, 4, 2, 1, 17, 14}},
    {'4', {2, 6, 10, 18, 31, 2, 2}},     {'5', {31, 16, 30, 1, 1, 17, 14}},   {'6', {6, 8, 16, 30, 17, 17, 14}},
    {'7', {31, 1, 2, 4, 8, 8, 8}},       {'8', {14, 17, 17, 14, 17, 17, 14}}, {'9', {14, 17, 17, 15, 1, 2, 12}},
    {'_', {0, 0, 0, 0, 0, 0, 31}},       {'-', {0, 0, 0, 31, 0, 0, 0}},       {'.', {0, 0, 0, 0, 0, 12, 12}},
    {':', {0, 12, 12, 0, 12, 12, 0}},    {'@', {14, 17, 23, 21, 23, 16, 15}},
};

inline const Glyph* find(char c) {
  c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kGlyphs)
    if (g.c == c) return &g;
  return nullptr;
}

/// Draws `text` (upper-cased) at (x, y); returns the advance in pixels.
inline int draw(Image& img, int x, int y, std::string_view text, Rgb c, int scale = 1) {
  int cx = x;
  for (char ch : text) {
    if (const Glyph* g = find(ch))
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (g->rows[static_cast<std::size_t>(r)] & (16 >> col))
            img.fill(cx + col * scale, y + r * scale, cx + col * scale + scale - 1, y + r * scale + scale - 1, c);
    cx += 6 * scale;
  }
  return cx - x;
}

}  // namespace font

inline constexpr std::array<Rgb, kNumTypeClasses> kTypeColors = {{
    {230, 25, 75},  {60, 180, 75},  {0, 130, 200}, {245, 130, 48},  {145, 30, 180},
    {70, 200, 200}, {240, 50, 230}, {128, 128, 0}, {170, 110, 40}, {128, 128, 128},
}};
inline constexpr std::array<Rgb, kNumGroupKinds> kGroupColors = {{
    {200, 0, 0}, {0, 110, 0}, {0, 0, 200}, {200, 120, 0}, {100, 0, 160},
}};

/// Color for a type name from either scheme; reduced classes reuse the
/// color of their closest full class.
inline Rgb type_color(const std::string& name) {
  if (auto t = parse_type_class(name)) return kTypeColors[static_cast<std::size_t>(*t)];
  if (name == "ChoiceFieldCaption") return kTypeColors[static_cast<std::size_t>(TypeClass::ChoiceCaption)];
  if (name == "OtherTextBlock") return kTypeColors[static_cast<std::size_t>(TypeClass::StaticText)];
  return {0, 0, 0};
}

/// Renders one prediction over its form at `scale` pixels per page unit.
inline Image render_overlay(const Form& form, const Prediction& pred, double scale = 1.0) {
  constexpr int kLegendRow = 12;
  std::vector<std::string> used_types;
  for (const auto& t : pred.types)
    if (!t.empty() && std::find(used_types.begin(), used_types.end(), t) == used_types.end()) used_types.push_back(t);
  std::sort(used_types.begin(), used_types.end());
  std::set<GroupKind> used_kinds;
  for (const auto& g : pred.groups) used_kinds.insert(g.kind);

  const int page_w = static_cast<int>(std::ceil(form.page_w * scale));
  const int page_h = static_cast<int>(std::ceil(form.page_h * scale));
  const int legend_h = kLegendRow * static_cast<int>(used_types.size() + used_kinds.size()) + 8;
  Image img(std::max(page_w, 160), page_h + legend_h);
  auto px = [&](double v) { return static_cast<int>(std::lround(v * scale)); };

  for (std::size_t i = 0; i < form.elements.size(); ++i) {
    const auto& b = form.elements[i].bbox;
    const Rgb c = i < pred.types.size() && !pred.types[i].empty() ? type_color(pred.types[i]) : Rgb{0, 0, 0};
    img.rect(px(b.x), px(b.y), px(b.right()), px(b.bottom()), c);
  }
  for (const auto& g : pred.groups) {
    bool known = !g.members.empty();
    for (int m : g.members) known = known && std::any_of(form.elements.begin(), form.elements.end(), [&](const Element& e) { return e.id == m; });
    if (!known) continue;
    const BBox u = union_bbox(form, g);
    img.rect(px(u.x) - 3, px(u.y) - 3, px(u.right()) + 3, px(u.bottom()) + 3, kGroupColors[static_cast<std::size_t>(g.kind)], 2);
  }

  int y = page_h + 4;
  img.fill(0, page_h, img.width() - 1, page_h, {0, 0, 0});
  for (const auto& t : used_types) {
    img.fill(4, y + 1, 10, y + 7, type_color(t));
    font::draw(img, 16, y + 1, t, {0, 0, 0});
    y += kLegendRow;
  }
  for (GroupKind k : used_kinds) {
    img.rect(4, y + 1, 10, y + 7, kGroupColors[static_cast<std::size_t>(k)], 1);
    font::draw(img, 16, y + 1, to_string(k), {0, 0, 0});
    y += kLegendRow;
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  const std::string bytes = img.ppm();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace form2seq
