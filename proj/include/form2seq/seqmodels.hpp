#pragma once

// Model graphs over reading-ordered elements:
//   type     text encoder -> context encoder -> type decoder (10 classes)
//   group    text encoder -> context encoder -> group decoder (id head)
//   cascade  type stage (6 classes) feeding a group stage with group + field
//            id heads, trained jointly
//   table    group decoder with row and column id heads
// Decoders are autoregressive LSTMs whose step input is [b_i ; embedded
// previous outputs] and whose projection sees [h_i ; attention contexts].

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "form2seq/docmodel.hpp"
#include "form2seq/encoders.hpp"
#include "form2seq/form_io.hpp"
#include "form2seq/nncore.hpp"

namespace form2seq {

enum class Task { Type, GroupIsolated, Cascade, Table };

/// How the cascade's group stage sees the type stage.
enum class CascadeWiring {
  SharedEncoder,      // B_G: one context encoder, second attention over type decoder states
  NonDifferentiable,  // C_G: one-hot of predicted type, no gradient
  SoftmaxFeed,        // D_G: type softmax concatenated with e_i
  LstmFeed,           // E_G / F_G: type decoder LSTM outputs concatenated with e_i
};

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::Type: return "type";
    case Task::GroupIsolated: return "group";
    case Task::Cascade: return "cascade";
    default: return "table";
  }
}

inline std::optional<Task> parse_task(std::string_view s) {
  for (Task t : {Task::Type, Task::GroupIsolated, Task::Cascade, Task::Table})
    if (task_name(t) == s) return t;
  return std::nullopt;
}

struct ModelConfig {
  Task task = Task::Type;
  InputVariant input = InputVariant::TextCoords;
  CascadeWiring wiring = CascadeWiring::LstmFeed;
  EncoderDims enc;
  int context_hidden = 500;
  int decoder_hidden = 1000;
  int attention_dim = 500;
  int token_dim = 32;
  int group_capacity = kDefaultGroupCapacity;
  GroupKind group_kind = GroupKind::ChoiceGroup;  // target of the isolated group task
  std::uint64_t seed = 1;

  /// Tag such as "C_T", "A_G" or "E_G".
  std::string variant() const {
    switch (task) {
      case Task::Type:
      case Task::Table: return std::string(variant_tag(input));
      case Task::GroupIsolated: return "A_G";
      case Task::Cascade:
        switch (wiring) {
          case CascadeWiring::SharedEncoder: return "B_G";
          case CascadeWiring::NonDifferentiable: return "C_G";
          case CascadeWiring::SoftmaxFeed: return "D_G";
          default: return input == InputVariant::CoordsFlag ? "F_G" : "E_G";
        }
    }
    return {};
  }
};

/// Full-size dimensions for the given task/variant; throws on unknown pairs.
inline ModelConfig make_config(Task task, std::string_view variant = {}) {
  ModelConfig c;
  c.task = task;
  auto bad = [&] {
    return std::invalid_argument("variant '" + std::string(variant) + "' is not valid for task " +
                                 std::string(task_name(task)));
  };
  switch (task) {
    case Task::Type:
    case Task::Table:
      if (variant.empty() || variant == "C_T")
        c.input = InputVariant::TextCoords;
      else if (variant == "A_T")
        c.input = InputVariant::CoordsOnly;
      else if (variant == "B_T")
        c.input = InputVariant::CoordsFlag;
      else
        throw bad();
      break;
    case Task::GroupIsolated:
      if (!variant.empty() && variant != "A_G") throw bad();
      break;
    case Task::Cascade:
      if (variant.empty() || variant == "E_G")
        c.wiring = CascadeWiring::LstmFeed;
      else if (variant == "B_G")
        c.wiring = CascadeWiring::SharedEncoder;
      else if (variant == "C_G")
        c.wiring = CascadeWiring::NonDifferentiable;
      else if (variant == "D_G")
        c.wiring = CascadeWiring::SoftmaxFeed;
      else if (variant == "F_G") {
        c.wiring = CascadeWiring::LstmFeed;
        c.input = InputVariant::CoordsFlag;
      } else {
        throw bad();
      }
      break;
  }
  return c;
}

/// Miniature dimensions (4-8) for gradient checks.
inline ModelConfig make_mini_config(Task task, std::string_view variant = {}) {
  ModelConfig c = make_config(task, variant);
  c.enc = {16, 5, 4, 200};
  c.context_hidden = 4;
  c.decoder_hidden = 6;
  c.attention_dim = 5;
  c.token_dim = 3;
  c.group_capacity = 16;
  return c;
}

/// Reduced dimensions used for desk-scale training runs.
inline ModelConfig make_desk_config(Task task, std::string_view variant = {}) {
  ModelConfig c = make_config(task, variant);
  c.enc = {1000, 32, 32, 200};
  c.context_hidden = 64;
  c.decoder_hidden = 128;
  c.attention_dim = 64;
  c.token_dim = 16;
  return c;
}

inline json to_json(const ModelConfig& c) {
  return {{"task", std::string(task_name(c.task))},
          {"variant", c.variant()},
          {"buckets", c.enc.buckets},
          {"word_dim", c.enc.word_dim},
          {"text_hidden", c.enc.text_hidden},
          {"max_words", c.enc.max_words},
          {"context_hidden", c.context_hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"attention_dim", c.attention_dim},
          {"token_dim", c.token_dim},
          {"group_capacity", c.group_capacity},
          {"group_kind", std::string(to_string(c.group_kind))},
          {"seed", c.seed}};
}

/// Accepts a full or partial object; missing fields keep their defaults
/// (full-size unless `base` says otherwise).
inline ModelConfig model_config_from_json(const json& j, std::optional<ModelConfig> base = std::nullopt) {
  detail::require_keys(j,
                       {"task", "variant", "buckets", "word_dim", "text_hidden", "max_words", "context_hidden",
                        "decoder_hidden", "attention_dim", "token_dim", "group_capacity", "group_kind", "seed"},
                       "model config");
  ModelConfig c = base.value_or(ModelConfig{});
  Task task = c.task;
  if (j.contains("task")) {
    auto t = parse_task(j["task"].get<std::string>());
    if (!t) throw FormatError("model config: unknown task " + j["task"].dump());
    task = *t;
  }
  const std::string variant = j.contains("variant") ? j["variant"].get<std::string>()
                              : base ? base->variant()
                                     : std::string();
  ModelConfig shaped = make_config(task, variant);
  c.task = shaped.task;
  c.input = shaped.input;
  c.wiring = shaped.wiring;
  auto get = [&](const char* k, int& dst) {
    if (j.contains(k)) dst = j[k].get<int>();
  };
  get("buckets", c.enc.buckets);
  get("word_dim", c.enc.word_dim);
  get("text_hidden", c.enc.text_hidden);
  get("max_words", c.enc.max_words);
  get("context_hidden", c.context_hidden);
  get("decoder_hidden", c.decoder_hidden);
  get("attention_dim", c.attention_dim);
  get("token_dim", c.token_dim);
  get("group_capacity", c.group_capacity);
  if (j.contains("group_kind")) {
    auto k = parse_group_kind(j["group_kind"].get<std::string>());
    if (!k) throw FormatError("model config: unknown group_kind");
    c.group_kind = *k;
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  return c;
}

inline std::string config_hash(const ModelConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

struct HeadSpec {
  std::string name;
  int classes = 0;
};

// ---------------------------------------------------------------------------

/// Autoregressive LSTM decoder with additive attention over one or two
/// memories and one or more classification heads.
template <class T>
class Decoder {
 public:
  struct Head {
    HeadSpec spec;
    nn::Embedding<T> token;  // classes + 1 columns; the last is the start token
    nn::Linear<T> proj;
  };
  struct Cache {
    nn::Mat<T> input;
    nn::LstmCache<T> lstm;
    std::vector<nn::AttentionCache<T>> att;
    nn::Mat<T> features;
    std::vector<std::vector<int>> prev;
  };
  struct Output {
    std::vector<nn::Mat<T>> logits;
    nn::Mat<T> hidden;
    std::vector<std::vector<int>> predictions;
  };

  Decoder() = default;
  Decoder(nn::Parameters<T>& p, const std::string& prefix, nn::Index in_dim, std::vector<nn::Index> memory_dims,
          std::vector<HeadSpec> heads, const ModelConfig& cfg, nn::Rng& rng)
      : in_dim_(in_dim), hidden_(cfg.decoder_hidden), token_dim_(cfg.token_dim) {
    nn::Index feature_dim = hidden_;
    for (auto d : memory_dims) feature_dim += d;
    for (auto& h : heads)
      heads_.push_back({h, nn::Embedding<T>(p, prefix + "." + h.name + ".tok", token_dim_, h.classes + 1, rng), {}});
    lstm_ = nn::Lstm<T>(p, prefix + ".lstm", in_dim + token_dim_ * static_cast<nn::Index>(heads_.size()), hidden_, rng);
    for (std::size_t k = 0; k < memory_dims.size(); ++k)
      att_.emplace_back(p, prefix + (k == 0 ? ".att" : ".att" + std::to_string(k + 1)), hidden_, memory_dims[k],
                        cfg.attention_dim, rng);
    for (auto& h : heads_) h.proj = nn::Linear<T>(p, prefix + "." + h.spec.name + ".out", feature_dim, h.spec.classes, rng);
  }

  const std::vector<Head>& heads() const { return heads_; }
  nn::Index hidden() const { return hidden_; }

  Output teacher_forced(const nn::Parameters<T>& p, const nn::Mat<T>& x, const std::vector<const nn::Mat<T>*>& mems,
                        const std::vector<const std::vector<int>*>& targets, Cache& cache) const {
    const nn::Index n = x.cols();
    check(x, mems);
    cache.prev.assign(heads_.size(), std::vector<int>(static_cast<std::size_t>(n)));
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      if (!targets[h] || targets[h]->size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("teacher forcing needs gold labels for head '" + heads_[h].spec.name + "'");
      for (nn::Index i = 0; i < n; ++i)
        cache.prev[h][static_cast<std::size_t>(i)] =
            i == 0 ? heads_[h].spec.classes : (*targets[h])[static_cast<std::size_t>(i - 1)];
    }
    cache.input.resize(lstm_.in(), n);
    cache.input.topRows(in_dim_) = x;
    for (std::size_t h = 0; h < heads_.size(); ++h)
      for (nn::Index i = 0; i < n; ++i)
        cache.input.block(in_dim_ + token_dim_ * static_cast<nn::Index>(h), i, token_dim_, 1) =
            heads_[h].token.column(p, cache.prev[h][static_cast<std::size_t>(i)]);
    lstm_.forward(p, cache.input, cache.lstm);
    cache.features.resize(heads_.front().proj.in(), n);
    cache.features.topRows(hidden_) = cache.lstm.h;
    cache.att.resize(att_.size());
    nn::Index offset = hidden_;
    for (std::size_t k = 0; k < att_.size(); ++k) {
      cache.features.middleRows(offset, att_[k].memory_dim()) = att_[k].forward(p, cache.lstm.h, *mems[k], cache.att[k]);
      offset += att_[k].memory_dim();
    }
    Output out;
    out.hidden = cache.lstm.h;
    for (const auto& head : heads_) {
      out.logits.push_back(head.proj.forward(p, cache.features));
      out.predictions.push_back(argmax_columns(out.logits.back()));
    }
    return out;
  }

  /// Step-by-step decoding feeding back each step's argmax.
  Output greedy(const nn::Parameters<T>& p, const nn::Mat<T>& x, const std::vector<const nn::Mat<T>*>& mems) const {
    const nn::Index n = x.cols();
    check(x, mems);
    std::vector<nn::Mat<T>> keys;
    for (std::size_t k = 0; k < att_.size(); ++k) keys.push_back(att_[k].keys(p, *mems[k]));
    Output out;
    out.hidden.resize(hidden_, n);
    out.predictions.assign(heads_.size(), std::vector<int>(static_cast<std::size_t>(n)));
    for (const auto& head : heads_) out.logits.emplace_back(head.spec.classes, n);
    std::vector<int> prev;
    for (const auto& head : heads_) prev.push_back(head.spec.classes);
    auto state = lstm_.zero_state();
    nn::Vec<T> u(lstm_.in());
    nn::Vec<T> features(heads_.front().proj.in());
    for (nn::Index i = 0; i < n; ++i) {
      u.head(in_dim_) = x.col(i);
      for (std::size_t h = 0; h < heads_.size(); ++h)
        u.segment(in_dim_ + token_dim_ * static_cast<nn::Index>(h), token_dim_) = heads_[h].token.column(p, prev[h]);
      state = lstm_.step(p, u, state.h, state.c);
      out.hidden.col(i) = state.h;
      features.head(hidden_) = state.h;
      nn::Index offset = hidden_;
      for (std::size_t k = 0; k < att_.size(); ++k) {
        features.segment(offset, att_[k].memory_dim()) = att_[k].attend(p, keys[k], *mems[k], state.h).first;
        offset += att_[k].memory_dim();
      }
      for (std::size_t h = 0; h < heads_.size(); ++h) {
        const nn::Mat<T> logit = heads_[h].proj.forward(p, features);
        out.logits[h].col(i) = logit.col(0);
        nn::Index best = 0;
        logit.col(0).maxCoeff(&best);
        prev[h] = static_cast<int>(best);
        out.predictions[h][static_cast<std::size_t>(i)] = prev[h];
      }
    }
    return out;
  }

  /// Returns (d input, d memories). `dhidden` adds gradient flowing into the
  /// LSTM outputs from outside the decoder (may be empty).
  std::pair<nn::Mat<T>, std::vector<nn::Mat<T>>> backward(const nn::Parameters<T>& p, const Cache& cache,
                                                          const std::vector<const nn::Mat<T>*>& mems,
                                                          const std::vector<nn::Mat<T>>& dlogits,
                                                          const nn::Mat<T>& dhidden, nn::Gradients<T>& g) const {
    nn::Mat<T> dfeat = nn::Mat<T>::Zero(cache.features.rows(), cache.features.cols());
    for (std::size_t h = 0; h < heads_.size(); ++h) dfeat += heads_[h].proj.backward(p, cache.features, dlogits[h], g);
    nn::Mat<T> dh = dfeat.topRows(hidden_);
    if (dhidden.size()) dh += dhidden;
    std::vector<nn::Mat<T>> dmems;
    nn::Index offset = hidden_;
    for (std::size_t k = 0; k < att_.size(); ++k) {
      auto [dq, dm] = att_[k].backward(p, cache.att[k], cache.lstm.h, *mems[k],
                                       dfeat.middleRows(offset, att_[k].memory_dim()), g);
      dh += dq;
      dmems.push_back(std::move(dm));
      offset += att_[k].memory_dim();
    }
    const nn::Mat<T> du = lstm_.backward(p, cache.lstm, dh, nn::Mat<T>(), g);
    for (std::size_t h = 0; h < heads_.size(); ++h)
      for (nn::Index i = 0; i < du.cols(); ++i)
        heads_[h].token.accumulate(g, cache.prev[h][static_cast<std::size_t>(i)],
                                   du.block(in_dim_ + token_dim_ * static_cast<nn::Index>(h), i, token_dim_, 1));
    return {du.topRows(in_dim_), std::move(dmems)};
  }

  static std::vector<int> argmax_columns(const nn::Mat<T>& m) {
    std::vector<int> out(static_cast<std::size_t>(m.cols()));
    for (nn::Index i = 0; i < m.cols(); ++i) {
      nn::Index best = 0;
      m.col(i).maxCoeff(&best);
      out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
  }

 private:
  void check(const nn::Mat<T>& x, const std::vector<const nn::Mat<T>*>& mems) const {
    nn::check_shape(x.rows() == in_dim_, "decoder: input has " + std::to_string(x.rows()) + " rows, expected " +
                                             std::to_string(in_dim_));
    nn::check_shape(mems.size() == att_.size(), "decoder: wrong number of memories");
    if (x.cols() == 0) throw std::invalid_argument("decoder: empty sequence");
  }

  nn::Index in_dim_ = 0, hidden_ = 0, token_dim_ = 0;
  std::vector<Head> heads_;
  nn::Lstm<T> lstm_;
  std::vector<nn::AdditiveAttention<T>> att_;
};

// ---------------------------------------------------------------------------

/// A form serialized in reading order together with its label sequences.
struct PreparedForm {
  std::vector<std::size_t> order;  // position -> index into Form::elements
  std::vector<int> element_ids;    // position -> element id
  std::vector<PreparedElement> elements;
  std::vector<std::vector<int>> targets;  // per model head; empty when unavailable
  int clamped_boxes = 0;
};

inline std::vector<HeadSpec> decoder_heads(const ModelConfig& c, bool type_decoder) {
  const int ids = c.group_capacity + 1;
  switch (c.task) {
    case Task::Type: return type_decoder ? std::vector<HeadSpec>{{"type", kNumTypeClasses}} : std::vector<HeadSpec>{};
    case Task::GroupIsolated: return type_decoder ? std::vector<HeadSpec>{} : std::vector<HeadSpec>{{"group", ids}};
    case Task::Table:
      return type_decoder ? std::vector<HeadSpec>{} : std::vector<HeadSpec>{{"row", ids}, {"column", ids}};
    case Task::Cascade:
      return type_decoder ? std::vector<HeadSpec>{{"type", kNumReducedTypes}}
                          : std::vector<HeadSpec>{{"group", ids}, {"field", ids}};
  }
  return {};
}

/// All heads of a model, type decoder first.
inline std::vector<HeadSpec> model_heads(const ModelConfig& c) {
  auto heads = decoder_heads(c, true);
  for (auto& h : decoder_heads(c, false)) heads.push_back(h);
  return heads;
}

/// Serializes `form` and, when `with_targets`, builds every head's label
/// sequence that the form's annotations allow (missing ones stay empty).
/// Throws CapacityError if a group head would overflow.
inline PreparedForm prepare_form(const Form& form, const ModelConfig& cfg, bool with_targets = true) {
  PreparedForm pf;
  pf.order = reading_order(form.elements);
  for (std::size_t idx : pf.order) {
    const auto& e = form.elements[idx];
    bool clamped = false;
    pf.elements.push_back(prepare_element(e, form.page_w, form.page_h, cfg.enc, &clamped));
    pf.clamped_boxes += clamped ? 1 : 0;
    pf.element_ids.push_back(e.id);
  }
  const auto heads = model_heads(cfg);
  pf.targets.assign(heads.size(), {});
  if (!with_targets) return pf;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& name = heads[h].name;
    auto& tgt = pf.targets[h];
    if (name == "type") {
      bool complete = true;
      for (std::size_t idx : pf.order) {
        const auto& t = form.elements[idx].gold_type;
        if (!t) {
          complete = false;
          break;
        }
        tgt.push_back(cfg.task == Task::Cascade ? static_cast<int>(reduce(*t)) : static_cast<int>(*t));
      }
      if (!complete) tgt.clear();
    } else if (name == "group") {
      tgt = encode_group_labels(form, cfg.task == Task::Cascade ? GroupKind::ChoiceGroup : cfg.group_kind, pf.order,
                                cfg.group_capacity);
    } else if (name == "field") {
      const GroupKind kinds[] = {GroupKind::TextField, GroupKind::ChoiceField};
      tgt = encode_group_labels(form, kinds, pf.order, cfg.group_capacity);
    } else if (name == "row") {
      tgt = encode_group_labels(form, GroupKind::TableRow, pf.order, cfg.group_capacity);
    } else if (name == "column") {
      tgt = encode_group_labels(form, GroupKind::TableColumn, pf.order, cfg.group_capacity);
    }
  }
  return pf;
}

enum class DecodeMode { TeacherForced, Greedy };

template <class T>
struct ForwardResult {
  std::vector<HeadSpec> heads;
  std::vector<nn::Mat<T>> logits;             // classes x n, reading order
  std::vector<std::vector<int>> predictions;  // argmax per head
  std::vector<T> head_loss;                   // summed over elements (teacher forcing only)
  T loss = 0;
  nn::Mat<T> type_hidden;   // type decoder LSTM outputs
  nn::Mat<T> stage2_input;  // cascade group-stage encoder input

  /// Loss of head h averaged over elements.
  double mean_loss(std::size_t h) const {
    return logits.empty() || logits[h].cols() == 0
               ? 0.0
               : static_cast<double>(head_loss[h]) / static_cast<double>(logits[h].cols());
  }
};

template <class T>
class Form2SeqModel {
 public:
  explicit Form2SeqModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    nn::Rng rng(cfg_.seed);
    auto& p = params_;
    const int e_dim = embedding_dim(cfg_.input, cfg_.enc);
    if (cfg_.input == InputVariant::TextCoords) text_ = TextEncoder<T>(p, "te", cfg_.enc, rng);
    const bool has_type = cfg_.task == Task::Type || cfg_.task == Task::Cascade;
    if (has_type) {
      ce_t_ = ContextEncoder<T>(p, "ce_t", e_dim, cfg_.context_hidden, rng);
      td_ = Decoder<T>(p, "td", ce_t_.out(), {ce_t_.out()}, decoder_heads(cfg_, true), cfg_, rng);
    }
    if (cfg_.task == Task::Type) return;
    if (cfg_.task == Task::Cascade && cfg_.wiring == CascadeWiring::SharedEncoder) {
      gd_ = Decoder<T>(p, "gd", ce_t_.out(), {ce_t_.out(), static_cast<nn::Index>(cfg_.decoder_hidden)},
                       decoder_heads(cfg_, false), cfg_, rng);
      return;
    }
    ce_g_ = ContextEncoder<T>(p, "ce_g", e_dim + stage2_prefix_dim(), cfg_.context_hidden, rng);
    gd_ = Decoder<T>(p, "gd", ce_g_.out(), {ce_g_.out()}, decoder_heads(cfg_, false), cfg_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  nn::Parameters<T>& params() { return params_; }
  const nn::Parameters<T>& params() const { return params_; }
  std::vector<HeadSpec> heads() const { return model_heads(cfg_); }
  const TextEncoder<T>& text_encoder() const { return text_; }
  const ContextEncoder<T>& type_context_encoder() const { return ce_t_; }
  const ContextEncoder<T>& group_context_encoder() const { return ce_g_; }

  /// Rows prepended to e_i at the cascade group stage (0 when none).
  int stage2_prefix_dim() const {
    if (cfg_.task != Task::Cascade) return 0;
    switch (cfg_.wiring) {
      case CascadeWiring::NonDifferentiable:
      case CascadeWiring::SoftmaxFeed: return kNumReducedTypes;
      case CascadeWiring::LstmFeed: return cfg_.decoder_hidden;
      default: return 0;
    }
  }

  /// Runs the model. With `grads`, accumulates d(loss)/d(params) into it;
  /// that requires teacher forcing.
  ForwardResult<T> run(const nn::Parameters<T>& p, const PreparedForm& f, DecodeMode mode,
                       nn::Gradients<T>* grads = nullptr) const {
    if (f.elements.empty()) throw std::invalid_argument("form has no elements");
    if (grads && mode != DecodeMode::TeacherForced) throw std::invalid_argument("gradients need teacher forcing");
    const bool teacher = mode == DecodeMode::TeacherForced;
    ForwardResult<T> r;
    r.heads = heads();
    TextCache<T> text_cache;
    const nn::Mat<T> e = element_embeddings(p, cfg_.input == InputVariant::TextCoords ? &text_ : nullptr,
                                            std::span<const PreparedElement>(f.elements), cfg_.input, cfg_.enc,
                                            grads ? &text_cache : nullptr);
    const std::size_t n_type = decoder_heads(cfg_, true).size();
    auto targets_for = [&](std::size_t first, std::size_t count) {
      std::vector<const std::vector<int>*> t;
      for (std::size_t h = first; h < first + count; ++h) {
        if (teacher && f.targets[h].empty())
          throw std::invalid_argument("missing gold labels for head '" + r.heads[h].name + "'");
        t.push_back(&f.targets[h]);
      }
      return t;
    };
    auto decode = [&](const Decoder<T>& dec, const nn::Mat<T>& x, const std::vector<const nn::Mat<T>*>& mems,
                      std::size_t first, typename Decoder<T>::Cache& cache) {
      if (teacher) return dec.teacher_forced(p, x, mems, targets_for(first, dec.heads().size()), cache);
      return dec.greedy(p, x, mems);
    };

    nn::BiLstmCache<T> ce_t_cache, ce_g_cache;
    typename Decoder<T>::Cache td_cache, gd_cache;
    nn::Mat<T> b, d_type, type_logits, x2, b2;
    typename Decoder<T>::Output td_out, gd_out;

    if (n_type) {
      b = ce_t_.forward(p, e, ce_t_cache);
      td_out = decode(td_, b, {&b}, 0, td_cache);
      r.type_hidden = td_out.hidden;
      collect(r, td_out);
    }
    if (cfg_.task != Task::Type) {
      std::vector<const nn::Mat<T>*> mems;
      const nn::Mat<T>* gd_in = nullptr;
      if (cfg_.task == Task::Cascade && cfg_.wiring == CascadeWiring::SharedEncoder) {
        gd_in = &b;
        mems = {&b, &td_out.hidden};
      } else {
        if (cfg_.task == Task::Cascade) {
          x2.resize(stage2_prefix_dim() + e.rows(), e.cols());
          x2.topRows(stage2_prefix_dim()) = stage2_prefix(td_out);
          x2.bottomRows(e.rows()) = e;
          r.stage2_input = x2;
        }
        b2 = ce_g_.forward(p, cfg_.task == Task::Cascade ? x2 : e, ce_g_cache);
        gd_in = &b2;
        mems = {&b2};
      }
      gd_out = decode(gd_, *gd_in, mems, n_type, gd_cache);
      collect(r, gd_out);

      if (grads) {
        auto dlogits = loss_grads(r, f, n_type, gd_.heads().size());
        auto [d_in, d_mems] = gd_.backward(p, gd_cache, mems, dlogits, nn::Mat<T>(), *grads);
        nn::Mat<T> de = nn::Mat<T>::Zero(e.rows(), e.cols());
        nn::Mat<T> db_extra, dhidden_extra, dtype_logits_extra;
        if (cfg_.task == Task::Cascade && cfg_.wiring == CascadeWiring::SharedEncoder) {
          db_extra = d_in + d_mems[0];
          dhidden_extra = d_mems[1];
        } else {
          const nn::Mat<T> dx = ce_g_.backward(p, ce_g_cache, d_in + d_mems[0], *grads);
          de += dx.bottomRows(e.rows());
          const nn::Mat<T> dprefix = dx.topRows(stage2_prefix_dim());
          if (cfg_.task == Task::Cascade && cfg_.wiring == CascadeWiring::LstmFeed) dhidden_extra = dprefix;
          if (cfg_.task == Task::Cascade && cfg_.wiring == CascadeWiring::SoftmaxFeed)
            dtype_logits_extra = softmax_backward(td_out.logits[0], dprefix);
        }
        if (n_type) backward_type_stage(p, f, r, td_cache, ce_t_cache, b, dtype_logits_extra, dhidden_extra,
                                        db_extra, de, *grads);
        if (cfg_.input == InputVariant::TextCoords)
          element_embeddings_backward(p, text_, std::span<const PreparedElement>(f.elements), cfg_.enc, text_cache,
                                      de, *grads);
      } else if (teacher) {
        loss_grads(r, f, 0, r.heads.size());
      }
    } else if (grads) {
      nn::Mat<T> de = nn::Mat<T>::Zero(e.rows(), e.cols());
      backward_type_stage(p, f, r, td_cache, ce_t_cache, b, nn::Mat<T>(), nn::Mat<T>(), nn::Mat<T>(), de, *grads);
      if (cfg_.input == InputVariant::TextCoords)
        element_embeddings_backward(p, text_, std::span<const PreparedElement>(f.elements), cfg_.enc, text_cache, de,
                                    *grads);
    } else if (teacher) {
      loss_grads(r, f, 0, n_type);
    }
    r.loss = 0;
    for (T l : r.head_loss) r.loss += l;
    return r;
  }

  ForwardResult<T> run(const PreparedForm& f, DecodeMode mode) const { return run(params_, f, mode, nullptr); }

 private:
  static void collect(ForwardResult<T>& r, typename Decoder<T>::Output& out) {
    for (auto& l : out.logits) r.logits.push_back(l);
    for (auto& pr : out.predictions) r.predictions.push_back(pr);
    for (std::size_t i = 0; i < out.logits.size(); ++i) r.head_loss.push_back(T(0));
  }

  /// Fills head losses for heads [first, first+count) and returns their
  /// logit gradients.
  std::vector<nn::Mat<T>> loss_grads(ForwardResult<T>& r, const PreparedForm& f, std::size_t first,
                                     std::size_t count) const {
    std::vector<nn::Mat<T>> d;
    for (std::size_t h = first; h < first + count; ++h) {
      const auto& logits = r.logits[h];
      nn::Mat<T> g(logits.rows(), logits.cols());
      T total = 0;
      for (nn::Index i = 0; i < logits.cols(); ++i) {
        auto x = nn::softmax_xent<T>(logits.col(i), f.targets[h][static_cast<std::size_t>(i)]);
        total += x.loss;
        g.col(i) = x.grad;
      }
      r.head_loss[h] = total;
      d.push_back(std::move(g));
    }
    return d;
  }

  nn::Mat<T> stage2_prefix(const typename Decoder<T>::Output& td_out) const {
    const auto& logits = td_out.logits[0];
    switch (cfg_.wiring) {
      case CascadeWiring::NonDifferentiable: {
        nn::Mat<T> onehot = nn::Mat<T>::Zero(logits.rows(), logits.cols());
        for (nn::Index i = 0; i < logits.cols(); ++i) onehot(td_out.predictions[0][static_cast<std::size_t>(i)], i) = T(1);
        return onehot;
      }
      case CascadeWiring::SoftmaxFeed: {
        nn::Mat<T> s(logits.rows(), logits.cols());
        for (nn::Index i = 0; i < logits.cols(); ++i) s.col(i) = nn::softmax<T>(logits.col(i));
        return s;
      }
      default: return td_out.hidden;
    }
  }

  static nn::Mat<T> softmax_backward(const nn::Mat<T>& logits, const nn::Mat<T>& ds) {
    nn::Mat<T> dl(logits.rows(), logits.cols());
    for (nn::Index i = 0; i < logits.cols(); ++i) {
      const nn::Vec<T> s = nn::softmax<T>(logits.col(i));
      dl.col(i) = (s.array() * (ds.col(i).array() - s.dot(ds.col(i)))).matrix();
    }
    return dl;
  }

  void backward_type_stage(const nn::Parameters<T>& p, const PreparedForm& f, ForwardResult<T>& r,
                           const typename Decoder<T>::Cache& td_cache, const nn::BiLstmCache<T>& ce_cache,
                           const nn::Mat<T>& b, const nn::Mat<T>& dlogits_extra, const nn::Mat<T>& dhidden_extra,
                           const nn::Mat<T>& db_extra, nn::Mat<T>& de, nn::Gradients<T>& g) const {
    auto dlogits = loss_grads(r, f, 0, 1);
    if (dlogits_extra.size()) dlogits[0] += dlogits_extra;
    auto [d_in, d_mems] = td_.backward(p, td_cache, {&b}, dlogits, dhidden_extra, g);
    nn::Mat<T> db = d_in + d_mems[0];
    if (db_extra.size()) db += db_extra;
    de += ce_t_.backward(p, ce_cache, db, g);
  }

  ModelConfig cfg_;
  nn::Parameters<T> params_;
  TextEncoder<T> text_;
  ContextEncoder<T> ce_t_, ce_g_;
  Decoder<T> td_, gd_;
};

// ---------------------------------------------------------------------------

enum class Axis { Horizontal, Vertical };

/// Majority-vote cleanup of table ids. Elements whose spans along `axis`
/// overlap (transitively) form an alignment set: Horizontal compares x-spans
/// (columns), Vertical compares y-spans (rows). Every member of a set takes
/// the set's modal id, ties going to the smaller id.
inline std::vector<int> table_postprocess(std::span<const BBox> boxes, std::span<const int> ids, Axis axis) {
  if (boxes.size() != ids.size()) throw std::invalid_argument("table_postprocess: size mismatch");
  const std::size_t n = boxes.size();
  auto lo = [&](std::size_t i) { return axis == Axis::Horizontal ? boxes[i].x : boxes[i].y; };
  auto hi = [&](std::size_t i) { return axis == Axis::Horizontal ? boxes[i].right() : boxes[i].bottom(); };
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return lo(a) != lo(b) ? lo(a) < lo(b) : a < b; });
  std::vector<int> out(ids.begin(), ids.end());
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start + 1;
    double reach = hi(idx[start]);
    while (end < n && lo(idx[end]) < reach) {
      reach = std::max(reach, hi(idx[end]));
      ++end;
    }
    std::map<int, int> votes;
    for (std::size_t k = start; k < end; ++k) ++votes[ids[idx[k]]];
    int best = 0, best_count = -1;
    for (const auto& [id, count] : votes)
      if (count > best_count) best = id, best_count = count;
    for (std::size_t k = start; k < end; ++k) out[idx[k]] = best;
    start = end;
  }
  return out;
}

/// Decodes a model run into groups and per-element type names (parallel to
/// form.elements).
template <class T>
Prediction predict_structures(const Form& form, const Form2SeqModel<T>& model, const nn::Parameters<T>& params,
                              std::string name = {}) {
  const auto& cfg = model.config();
  const PreparedForm pf = prepare_form(form, cfg, false);
  const auto r = model.run(params, pf, DecodeMode::Greedy);
  Prediction pred;
  pred.form = std::move(name);
  pred.types.assign(form.elements.size(), std::string());
  std::vector<int> reduced(pf.order.size(), -1);
  for (std::size_t h = 0; h < r.heads.size(); ++h) {
    const auto& head = r.heads[h].name;
    const auto& ids = r.predictions[h];
    if (head == "type") {
      for (std::size_t p = 0; p < pf.order.size(); ++p) {
        pred.types[pf.order[p]] = cfg.task == Task::Cascade ? std::string(kReducedTypeNames[ids[p]])
                                                            : std::string(kTypeNames[ids[p]]);
        reduced[p] = ids[p];
      }
    } else if (head == "group") {
      auto g = decode_group_labels(ids, cfg.task == Task::Cascade ? GroupKind::ChoiceGroup : cfg.group_kind,
                                   pf.element_ids);
      pred.groups.insert(pred.groups.end(), g.begin(), g.end());
    } else if (head == "field") {
      auto fields = decode_group_labels(ids, GroupKind::TextField, pf.element_ids);
      std::map<int, std::size_t> pos_of;
      for (std::size_t p = 0; p < pf.element_ids.size(); ++p) pos_of[pf.element_ids[p]] = p;
      for (auto& g : fields) {
        for (int m : g.members) {
          const int t = reduced[pos_of[m]];
          if (t == static_cast<int>(ReducedType::ChoiceWidget) || t == static_cast<int>(ReducedType::ChoiceFieldCaption))
            g.kind = GroupKind::ChoiceField;
        }
        pred.groups.push_back(g);
      }
    } else if (head == "row" || head == "column") {
      std::vector<BBox> boxes;
      for (std::size_t idx : pf.order) boxes.push_back(form.elements[idx].bbox);
      const auto fixed = table_postprocess(boxes, ids, head == "row" ? Axis::Vertical : Axis::Horizontal);
      auto g = decode_group_labels(fixed, head == "row" ? GroupKind::TableRow : GroupKind::TableColumn, pf.element_ids);
      pred.groups.insert(pred.groups.end(), g.begin(), g.end());
    }
  }
  return pred;
}

}  // namespace form2seq
