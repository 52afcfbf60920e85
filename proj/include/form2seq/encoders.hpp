#pragma once

// Element representations: hashed character-trigram word features, the text
// encoder (final LSTM cell state over word features), the per-element
// embedding variants and the bidirectional context encoder.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "form2seq/docmodel.hpp"
#include "form2seq/nncore.hpp"

namespace form2seq {

// FNV-1a, 64 bit.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Whitespace tokenization of raw extracted text.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

/// Sparse bucket vector: (bucket, weight) pairs sorted by bucket.
using SparseFeature = std::vector<std::pair<int, double>>;

/// Character trigrams of "<" + lowercase(word) + ">" (bytes), hashed into
/// `buckets` with FNV-1a, counted and L2-normalized.
inline SparseFeature trigram_buckets(std::string_view word, int buckets = 1000) {
  SparseFeature out;
  if (word.empty()) return out;
  const std::string marked = "<" + ascii_lower(word) + ">";
  std::map<int, double> counts;
  for (std::size_t i = 0; i + 3 <= marked.size(); ++i)
    counts[static_cast<int>(fnv1a64(std::string_view(marked).substr(i, 3)) % static_cast<std::uint64_t>(buckets))] += 1;
  double sq = 0;
  for (const auto& [b, c] : counts) sq += c * c;
  const double norm = std::sqrt(sq);
  for (const auto& [b, c] : counts) out.emplace_back(b, c / norm);
  return out;
}

inline double sparse_dot(const SparseFeature& a, const SparseFeature& b) {
  double s = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first < b[j].first) {
      ++i;
    } else if (a[i].first > b[j].first) {
      ++j;
    } else {
      s += a[i++].second * b[j++].second;
    }
  }
  return s;
}

enum class InputVariant { CoordsOnly, CoordsFlag, TextCoords };

inline std::string_view variant_tag(InputVariant v) {
  switch (v) {
    case InputVariant::CoordsOnly: return "A_T";
    case InputVariant::CoordsFlag: return "B_T";
    default: return "C_T";
  }
}

/// Everything the encoders need about one element, independent of weights.
struct PreparedElement {
  int id = 0;
  bool is_text = true;
  std::array<double, 4> box{};
  std::vector<SparseFeature> words;  // already truncated
};

struct EncoderDims {
  int buckets = 1000;
  int word_dim = 100;
  int text_hidden = 100;
  int max_words = 200;
};

inline PreparedElement prepare_element(const Element& e, double page_w, double page_h, const EncoderDims& dims,
                                       bool* clamped = nullptr) {
  PreparedElement p;
  p.id = e.id;
  p.is_text = e.is_text();
  const auto nb = normalize_bbox(e.bbox, page_w, page_h);
  p.box = nb.values;
  if (clamped) *clamped = nb.clamped;
  if (p.is_text) {
    const std::size_t n = std::min<std::size_t>(e.words.size(), static_cast<std::size_t>(dims.max_words));
    for (std::size_t i = 0; i < n; ++i) p.words.push_back(trigram_buckets(e.words[i], dims.buckets));
  }
  return p;
}

inline int embedding_dim(InputVariant v, const EncoderDims& dims) {
  switch (v) {
    case InputVariant::CoordsOnly: return 4;
    case InputVariant::CoordsFlag: return 5;
    default: return dims.text_hidden + 4;
  }
}

template <class T>
struct TextCache {
  std::vector<nn::LstmCache<T>> lstm;  // one per element, empty when bypassed
  std::vector<bool> used;
};

/// Word projection (buckets -> word_dim, no bias) followed by an LSTM; the
/// text representation is the cell state after the last word.
template <class T>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(nn::Parameters<T>& p, const std::string& prefix, const EncoderDims& dims, nn::Rng& rng)
      : dims_(dims) {
    proj_ = p.add(prefix + ".proj.w", dims.word_dim, dims.buckets);
    nn::init_fan_in(p[proj_], rng);
    lstm_ = nn::Lstm<T>(p, prefix + ".lstm", dims.word_dim, dims.text_hidden, rng);
  }

  const nn::Lstm<T>& lstm() const { return lstm_; }
  nn::ParamId projection() const { return proj_; }

  nn::Vec<T> word_vector(const nn::Parameters<T>& p, const SparseFeature& f) const {
    nn::Vec<T> v = nn::Vec<T>::Zero(dims_.word_dim);
    for (const auto& [b, w] : f) v += p[proj_].col(b) * static_cast<T>(w);
    return v;
  }

  nn::Mat<T> word_matrix(const nn::Parameters<T>& p, const std::vector<SparseFeature>& words) const {
    nn::Mat<T> x(dims_.word_dim, static_cast<nn::Index>(words.size()));
    for (std::size_t i = 0; i < words.size(); ++i) x.col(static_cast<nn::Index>(i)) = word_vector(p, words[i]);
    return x;
  }

  /// Zero for widgets and for text blocks without words.
  nn::Vec<T> encode(const nn::Parameters<T>& p, const PreparedElement& e, nn::LstmCache<T>* cache) const {
    if (!e.is_text || e.words.empty()) return nn::Vec<T>::Zero(dims_.text_hidden);
    nn::LstmCache<T> local;
    auto& c = cache ? *cache : local;
    lstm_.forward(p, word_matrix(p, e.words), c);
    return c.c.col(c.c.cols() - 1);
  }

  void backward(const nn::Parameters<T>& p, const PreparedElement& e, const nn::LstmCache<T>& cache,
                const nn::Vec<T>& d_cell, nn::Gradients<T>& g) const {
    const nn::Index n = cache.x.cols();
    nn::Mat<T> dc = nn::Mat<T>::Zero(dims_.text_hidden, n);
    dc.col(n - 1) = d_cell;
    const nn::Mat<T> dx = lstm_.backward(p, cache, nn::Mat<T>(), dc, g);
    for (nn::Index i = 0; i < n; ++i)
      for (const auto& [b, w] : e.words[static_cast<std::size_t>(i)]) g[proj_].col(b) += dx.col(i) * static_cast<T>(w);
  }

 private:
  EncoderDims dims_;
  nn::ParamId proj_;
  nn::Lstm<T> lstm_;
};

/// Column i is e_i for the i-th element of `elements`.
template <class T>
nn::Mat<T> element_embeddings(const nn::Parameters<T>& p, const TextEncoder<T>* text,
                              std::span<const PreparedElement> elements, InputVariant variant,
                              const EncoderDims& dims, TextCache<T>* cache) {
  const int d = embedding_dim(variant, dims);
  nn::Mat<T> e = nn::Mat<T>::Zero(d, static_cast<nn::Index>(elements.size()));
  if (cache) {
    cache->lstm.assign(elements.size(), {});
    cache->used.assign(elements.size(), false);
  }
  for (std::size_t i = 0; i < elements.size(); ++i) {
    const auto& el = elements[i];
    auto col = e.col(static_cast<nn::Index>(i));
    int offset = 0;
    if (variant == InputVariant::TextCoords) {
      const bool used = el.is_text && !el.words.empty();
      if (used) col.head(dims.text_hidden) = text->encode(p, el, cache ? &cache->lstm[i] : nullptr);
      if (cache) cache->used[i] = used;
      offset = dims.text_hidden;
    }
    for (int k = 0; k < 4; ++k) col(offset + k) = static_cast<T>(el.box[static_cast<std::size_t>(k)]);
    if (variant == InputVariant::CoordsFlag) col(4) = el.is_text ? T(1) : T(0);
  }
  return e;
}

template <class T>
void element_embeddings_backward(const nn::Parameters<T>& p, const TextEncoder<T>& text,
                                 std::span<const PreparedElement> elements, const EncoderDims& dims,
                                 const TextCache<T>& cache, const nn::Mat<T>& de, nn::Gradients<T>& g) {
  for (std::size_t i = 0; i < elements.size(); ++i) {
    if (!cache.used[i]) continue;
    text.backward(p, elements[i], cache.lstm[i], de.col(static_cast<nn::Index>(i)).head(dims.text_hidden), g);
  }
}

/// Shared bidirectional encoder producing b_i = [fwd_i ; bwd_i].
template <class T>
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(nn::Parameters<T>& p, const std::string& prefix, nn::Index in, nn::Index hidden, nn::Rng& rng)
      : bilstm_(p, prefix, in, hidden, rng) {}

  nn::Index out() const { return bilstm_.out(); }
  const nn::BiLstm<T>& bilstm() const { return bilstm_; }

  nn::Mat<T> forward(const nn::Parameters<T>& p, const nn::Mat<T>& e, nn::BiLstmCache<T>& cache) const {
    if (e.cols() == 0) throw std::invalid_argument("context encoder: empty form");
    return bilstm_.forward(p, e, cache);
  }
  nn::Mat<T> backward(const nn::Parameters<T>& p, const nn::BiLstmCache<T>& cache, const nn::Mat<T>& db,
                      nn::Gradients<T>& g) const {
    return bilstm_.backward(p, cache, db, g);
  }

 private:
  nn::BiLstm<T> bilstm_;
};

}  // namespace form2seq
