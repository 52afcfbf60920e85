#pragma once

// Dense layers with hand-written reverse passes: affine maps, LSTM,
// bidirectional LSTM, additive attention, softmax cross-entropy, Adam and a
// finite-difference gradient checker. Everything is templated on the scalar
// so the same graph runs in float for training and double for checking.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace form2seq::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

/// Seeded generator with platform-independent real draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
  int range(int lo, int hi) { return lo + static_cast<int>(index(static_cast<std::size_t>(hi - lo + 1))); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next() { return engine_(); }

  template <class It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) std::swap(first[n - 1], first[index(static_cast<std::size_t>(n))]);
  }

 private:
  std::mt19937_64 engine_;
};

struct ParamId {
  std::size_t index = 0;
};

/// Named dense tensors (registration order is canonical) plus Adam state.
template <class T>
class Parameters {
 public:
  struct Moments {
    Mat<T> m;
    Mat<T> v;
  };

  ParamId add(std::string name, Index rows, Index cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    ParamId id{values_.size()};
    index_.emplace(name, id.index);
    names_.push_back(std::move(name));
    values_.push_back(Mat<T>::Zero(rows, cols));
    moments_.push_back({Mat<T>::Zero(rows, cols), Mat<T>::Zero(rows, cols)});
    return id;
  }

  Mat<T>& operator[](ParamId id) { return values_[id.index]; }
  const Mat<T>& operator[](ParamId id) const { return values_[id.index]; }
  Mat<T>& value(std::size_t i) { return values_[i]; }
  const Mat<T>& value(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::size_t size() const { return values_.size(); }

  std::optional<ParamId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  std::vector<Moments>& moments() { return moments_; }
  const std::vector<Moments>& moments() const { return moments_; }
  std::int64_t step = 0;

 private:
  std::vector<std::string> names_;
  std::vector<Mat<T>> values_;
  std::vector<Moments> moments_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient buffers shaped like a Parameters instance.
template <class T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const Parameters<T>& params) {
    grads_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      grads_.push_back(Mat<T>::Zero(params.value(i).rows(), params.value(i).cols()));
  }

  Mat<T>& operator[](ParamId id) { return grads_[id.index]; }
  const Mat<T>& operator[](ParamId id) const { return grads_[id.index]; }
  Mat<T>& value(std::size_t i) { return grads_[i]; }
  const Mat<T>& value(std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void zero() {
    for (auto& g : grads_) g.setZero();
  }
  Gradients& operator+=(const Gradients& other) {
    check_shape(other.size() == size(), "gradient sets differ in size");
    for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
    return *this;
  }
  void scale(T s) {
    for (auto& g : grads_) g *= s;
  }
  double global_norm() const {
    double sq = 0;
    for (const auto& g : grads_) sq += static_cast<double>(g.squaredNorm());
    return std::sqrt(sq);
  }

 private:
  std::vector<Mat<T>> grads_;
};

template <class T>
void init_uniform(Mat<T>& m, Rng& rng, double bound) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<T>(rng.uniform(-bound, bound));
}

/// uniform(-a, a) with a = 1/sqrt(fan_in), fan_in = column count.
template <class T>
void init_fan_in(Mat<T>& m, Rng& rng) {
  init_uniform(m, rng, 1.0 / std::sqrt(static_cast<double>(m.cols())));
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
Vec<T> softmax(const Eigen::Ref<const Vec<T>>& logits) {
  Vec<T> p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

template <class T>
struct XentResult {
  T loss;
  Vec<T> grad;
};

/// -log softmax(logits)[target] and its gradient softmax - onehot.
template <class T>
XentResult<T> softmax_xent(const Eigen::Ref<const Vec<T>>& logits, int target) {
  if (target < 0 || target >= logits.size())
    throw std::out_of_range("softmax_xent: target " + std::to_string(target) + " outside [0," +
                            std::to_string(logits.size()) + ")");
  const T mx = logits.maxCoeff();
  const Vec<T> shifted = logits.array() - mx;
  const T lse = std::log(shifted.array().exp().sum());
  XentResult<T> r{lse - shifted(target), (shifted.array() - lse).exp().matrix()};
  r.grad(target) -= T(1);
  return r;
}

// ---------------------------------------------------------------------------

/// y = W x + b over the columns of x.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(Parameters<T>& p, const std::string& prefix, Index in, Index out, Rng& rng, bool bias = true)
      : in_(in), out_(out), has_bias_(bias) {
    w_ = p.add(prefix + ".w", out, in);
    init_fan_in(p[w_], rng);
    if (bias) b_ = p.add(prefix + ".b", out, 1);
  }

  Mat<T> forward(const Parameters<T>& p, const Mat<T>& x) const {
    check_shape(x.rows() == in_, "linear: input has " + std::to_string(x.rows()) + " rows, expected " +
                                     std::to_string(in_));
    Mat<T> y = p[w_] * x;
    if (has_bias_) y.colwise() += p[b_].col(0);
    return y;
  }

  Mat<T> backward(const Parameters<T>& p, const Mat<T>& x, const Mat<T>& dy, Gradients<T>& g) const {
    g[w_].noalias() += dy * x.transpose();
    if (has_bias_) g[b_].col(0) += dy.rowwise().sum();
    return p[w_].transpose() * dy;
  }

  Index in() const { return in_; }
  Index out() const { return out_; }
  ParamId weight() const { return w_; }

 private:
  Index in_ = 0, out_ = 0;
  bool has_bias_ = true;
  ParamId w_, b_;
};

/// Learned lookup table; column k is the vector of token k.
template <class T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(Parameters<T>& p, const std::string& name, Index dim, Index vocab, Rng& rng) : dim_(dim) {
    table_ = p.add(name, dim, vocab);
    init_fan_in(p[table_], rng);
  }
  auto column(const Parameters<T>& p, int token) const { return p[table_].col(token); }
  void accumulate(Gradients<T>& g, int token, const Eigen::Ref<const Vec<T>>& d) const {
    g[table_].col(token) += d;
  }
  Index dim() const { return dim_; }

 private:
  Index dim_ = 0;
  ParamId table_;
};

// ---------------------------------------------------------------------------

template <class T>
struct LstmState {
  Vec<T> h;
  Vec<T> c;
};

template <class T>
struct LstmCache {
  Mat<T> x;      // in x n
  Mat<T> gates;  // 4H x n, post-activation (i, f, g, o)
  Mat<T> c;      // H x n
  Mat<T> h;      // H x n
  Mat<T> tanh_c; // H x n
};

/// Single-layer LSTM with gate order (input, forget, cell, output) and zero
/// initial state.
template <class T>
class Lstm {
 public:
  Lstm() = default;
  Lstm(Parameters<T>& p, const std::string& prefix, Index in, Index hidden, Rng& rng)
      : in_(in), hid_(hidden) {
    w_ih_ = p.add(prefix + ".w_ih", 4 * hidden, in);
    w_hh_ = p.add(prefix + ".w_hh", 4 * hidden, hidden);
    b_ = p.add(prefix + ".b", 4 * hidden, 1);
    init_fan_in(p[w_ih_], rng);
    init_fan_in(p[w_hh_], rng);
    p[b_].block(hidden, 0, hidden, 1).setConstant(T(1));
  }

  Index in() const { return in_; }
  Index hidden() const { return hid_; }
  ParamId w_ih() const { return w_ih_; }
  ParamId w_hh() const { return w_hh_; }
  ParamId bias() const { return b_; }

  /// One recurrence step from (h, c).
  LstmState<T> step(const Parameters<T>& p, const Eigen::Ref<const Vec<T>>& x, const Vec<T>& h,
                    const Vec<T>& c) const {
    check_shape(x.size() == in_, "lstm: input size " + std::to_string(x.size()) + ", expected " +
                                     std::to_string(in_));
    check_shape(h.size() == hid_ && c.size() == hid_, "lstm: state size mismatch");
    Vec<T> a = p[w_ih_] * x + p[w_hh_] * h + p[b_].col(0);
    Vec<T> gates(4 * hid_);
    activate(a, gates);
    LstmState<T> out;
    out.c = gates.segment(hid_, hid_).cwiseProduct(c) + gates.segment(0, hid_).cwiseProduct(gates.segment(2 * hid_, hid_));
    out.h = gates.segment(3 * hid_, hid_).cwiseProduct(out.c.array().tanh().matrix());
    return out;
  }

  LstmState<T> zero_state() const { return {Vec<T>::Zero(hid_), Vec<T>::Zero(hid_)}; }

  void forward(const Parameters<T>& p, const Mat<T>& x, LstmCache<T>& cache) const {
    check_shape(x.rows() == in_, "lstm: input has " + std::to_string(x.rows()) + " rows, expected " +
                                     std::to_string(in_));
    const Index n = x.cols();
    cache.x = x;
    cache.gates.resize(4 * hid_, n);
    cache.c.resize(hid_, n);
    cache.h.resize(hid_, n);
    cache.tanh_c.resize(hid_, n);
    Mat<T> pre = p[w_ih_] * x;
    pre.colwise() += p[b_].col(0);
    Vec<T> h = Vec<T>::Zero(hid_), c = Vec<T>::Zero(hid_), gates(4 * hid_);
    for (Index t = 0; t < n; ++t) {
      Vec<T> a = pre.col(t);
      a.noalias() += p[w_hh_] * h;
      activate(a, gates);
      c = gates.segment(hid_, hid_).cwiseProduct(c) + gates.segment(0, hid_).cwiseProduct(gates.segment(2 * hid_, hid_));
      cache.tanh_c.col(t) = c.array().tanh().matrix();
      h = gates.segment(3 * hid_, hid_).cwiseProduct(cache.tanh_c.col(t));
      cache.gates.col(t) = gates;
      cache.c.col(t) = c;
      cache.h.col(t) = h;
    }
  }

  /// dh and dc are gradients w.r.t. every step's emitted h and c (either may
  /// be empty for "none"). Returns the gradient w.r.t. the input sequence.
  Mat<T> backward(const Parameters<T>& p, const LstmCache<T>& cache, const Mat<T>& dh, const Mat<T>& dc,
                  Gradients<T>& g) const {
    const Index n = cache.x.cols();
    const Index H = hid_;
    Mat<T> dA(4 * H, n);
    Vec<T> dh_next = Vec<T>::Zero(H), dc_next = Vec<T>::Zero(H);
    for (Index t = n - 1; t >= 0; --t) {
      Vec<T> dht = dh_next;
      if (dh.size()) dht += dh.col(t);
      Vec<T> dct = dc_next;
      if (dc.size()) dct += dc.col(t);
      const auto gi = cache.gates.col(t).segment(0, H).array();
      const auto gf = cache.gates.col(t).segment(H, H).array();
      const auto gg = cache.gates.col(t).segment(2 * H, H).array();
      const auto go = cache.gates.col(t).segment(3 * H, H).array();
      const auto tc = cache.tanh_c.col(t).array();
      dct.array() += dht.array() * go * (T(1) - tc * tc);
      const Vec<T> c_prev = t > 0 ? Vec<T>(cache.c.col(t - 1)) : Vec<T>::Zero(H);
      dA.col(t).segment(0, H) = (dct.array() * gg * gi * (T(1) - gi)).matrix();
      dA.col(t).segment(H, H) = (dct.array() * c_prev.array() * gf * (T(1) - gf)).matrix();
      dA.col(t).segment(2 * H, H) = (dct.array() * gi * (T(1) - gg * gg)).matrix();
      dA.col(t).segment(3 * H, H) = (dht.array() * tc * go * (T(1) - go)).matrix();
      dc_next = (dct.array() * gf).matrix();
      dh_next.noalias() = p[w_hh_].transpose() * dA.col(t);
    }
    g[w_ih_].noalias() += dA * cache.x.transpose();
    g[b_].col(0) += dA.rowwise().sum();
    if (n > 1) g[w_hh_].noalias() += dA.rightCols(n - 1) * cache.h.leftCols(n - 1).transpose();
    return p[w_ih_].transpose() * dA;
  }

 private:
  void activate(const Vec<T>& a, Vec<T>& gates) const {
    const Index H = hid_;
    for (Index k = 0; k < H; ++k) {
      gates(k) = sigmoid(a(k));
      gates(H + k) = sigmoid(a(H + k));
      gates(2 * H + k) = std::tanh(a(2 * H + k));
      gates(3 * H + k) = sigmoid(a(3 * H + k));
    }
  }

  Index in_ = 0, hid_ = 0;
  ParamId w_ih_, w_hh_, b_;
};

template <class T>
Mat<T> reverse_columns(const Mat<T>& m) {
  return m.rowwise().reverse();
}

template <class T>
struct BiLstmCache {
  LstmCache<T> fwd;
  LstmCache<T> bwd;  // runs over the reversed sequence
};

/// Forward and backward LSTMs; output column i = [fwd_i ; bwd_i].
template <class T>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(Parameters<T>& p, const std::string& prefix, Index in, Index hidden, Rng& rng)
      : fwd_(p, prefix + ".fwd", in, hidden, rng), bwd_(p, prefix + ".bwd", in, hidden, rng) {}

  Index in() const { return fwd_.in(); }
  Index out() const { return 2 * fwd_.hidden(); }
  const Lstm<T>& forward_lstm() const { return fwd_; }
  const Lstm<T>& backward_lstm() const { return bwd_; }

  Mat<T> forward(const Parameters<T>& p, const Mat<T>& x, BiLstmCache<T>& cache) const {
    if (x.cols() == 0) throw std::invalid_argument("bilstm: empty sequence");
    fwd_.forward(p, x, cache.fwd);
    bwd_.forward(p, reverse_columns(x), cache.bwd);
    Mat<T> result(out(), x.cols());
    result.topRows(fwd_.hidden()) = cache.fwd.h;
    result.bottomRows(bwd_.hidden()) = reverse_columns(cache.bwd.h);
    return result;
  }

  Mat<T> backward(const Parameters<T>& p, const BiLstmCache<T>& cache, const Mat<T>& dout,
                  Gradients<T>& g) const {
    const Index H = fwd_.hidden();
    Mat<T> dx = fwd_.backward(p, cache.fwd, dout.topRows(H), Mat<T>(), g);
    dx += reverse_columns(bwd_.backward(p, cache.bwd, reverse_columns(Mat<T>(dout.bottomRows(H))), Mat<T>(), g));
    return dx;
  }

 private:
  Lstm<T> fwd_, bwd_;
};

// ---------------------------------------------------------------------------

template <class T>
struct AttentionCache {
  Mat<T> keys;                // A x T
  Mat<T> queries;             // A x n
  std::vector<Mat<T>> energy; // per query: tanh(keys + q), A x T
  Mat<T> weights;             // T x n
};

/// score_j = v . tanh(W_q q + W_m m_j); weights = softmax(score);
/// context = sum_j weights_j m_j.
template <class T>
class AdditiveAttention {
 public:
  AdditiveAttention() = default;
  AdditiveAttention(Parameters<T>& p, const std::string& prefix, Index query_dim, Index memory_dim,
                    Index att_dim, Rng& rng)
      : qdim_(query_dim), mdim_(memory_dim), adim_(att_dim) {
    w_q_ = p.add(prefix + ".w_q", att_dim, query_dim);
    w_m_ = p.add(prefix + ".w_m", att_dim, memory_dim);
    v_ = p.add(prefix + ".v", att_dim, 1);
    init_fan_in(p[w_q_], rng);
    init_fan_in(p[w_m_], rng);
    init_uniform(p[v_], rng, 1.0 / std::sqrt(static_cast<double>(att_dim)));
  }

  Index memory_dim() const { return mdim_; }
  ParamId w_q() const { return w_q_; }
  ParamId w_m() const { return w_m_; }
  ParamId v() const { return v_; }

  Mat<T> keys(const Parameters<T>& p, const Mat<T>& memory) const {
    if (memory.cols() == 0) throw std::invalid_argument("attention: empty memory");
    check_shape(memory.rows() == mdim_, "attention: memory rows " + std::to_string(memory.rows()) +
                                            ", expected " + std::to_string(mdim_));
    return p[w_m_] * memory;
  }

  /// Attend with one query against precomputed keys.
  std::pair<Vec<T>, Vec<T>> attend(const Parameters<T>& p, const Mat<T>& keys, const Mat<T>& memory,
                                   const Eigen::Ref<const Vec<T>>& query) const {
    check_shape(query.size() == qdim_, "attention: query size mismatch");
    const Vec<T> q = p[w_q_] * query;
    const Mat<T> e = (keys.colwise() + q).array().tanh().matrix();
    const Vec<T> scores = e.transpose() * p[v_].col(0);
    Vec<T> w = softmax<T>(scores);
    return {memory * w, w};
  }

  /// Context vector and weights for one query.
  std::pair<Vec<T>, Vec<T>> attend(const Parameters<T>& p, const Mat<T>& memory,
                                   const Eigen::Ref<const Vec<T>>& query) const {
    return attend(p, keys(p, memory), memory, query);
  }

  /// Batched over query columns; returns contexts (memory_dim x n).
  Mat<T> forward(const Parameters<T>& p, const Mat<T>& queries, const Mat<T>& memory,
                 AttentionCache<T>& cache) const {
    check_shape(queries.rows() == qdim_, "attention: query size mismatch");
    cache.keys = keys(p, memory);
    cache.queries = p[w_q_] * queries;
    const Index n = queries.cols(), T_ = memory.cols();
    cache.energy.resize(static_cast<std::size_t>(n));
    cache.weights.resize(T_, n);
    for (Index i = 0; i < n; ++i) {
      auto& e = cache.energy[static_cast<std::size_t>(i)];
      e = (cache.keys.colwise() + cache.queries.col(i)).array().tanh().matrix();
      const Vec<T> scores = e.transpose() * p[v_].col(0);
      cache.weights.col(i) = softmax<T>(scores);
    }
    return memory * cache.weights;
  }

  /// Returns (d queries, d memory).
  std::pair<Mat<T>, Mat<T>> backward(const Parameters<T>& p, const AttentionCache<T>& cache,
                                     const Mat<T>& queries, const Mat<T>& memory, const Mat<T>& dctx,
                                     Gradients<T>& g) const {
    const Index n = queries.cols();
    Mat<T> dmem = dctx * cache.weights.transpose();
    Mat<T> dq(adim_, n);
    Mat<T> dkeys = Mat<T>::Zero(adim_, memory.cols());
    const Mat<T> dw_all = memory.transpose() * dctx;  // T x n
    const auto v = p[v_].col(0);
    for (Index i = 0; i < n; ++i) {
      const auto w = cache.weights.col(i);
      const Vec<T> dscores = (w.array() * (dw_all.col(i).array() - w.dot(dw_all.col(i)))).matrix();
      const auto& e = cache.energy[static_cast<std::size_t>(i)];
      g[v_].col(0).noalias() += e * dscores;
      Mat<T> de = (v * dscores.transpose()).array() * (T(1) - e.array().square());
      dq.col(i) = de.rowwise().sum();
      dkeys += de;
    }
    g[w_q_].noalias() += dq * queries.transpose();
    g[w_m_].noalias() += dkeys * memory.transpose();
    dmem.noalias() += p[w_m_].transpose() * dkeys;
    return {p[w_q_].transpose() * dq, dmem};
  }

 private:
  Index qdim_ = 0, mdim_ = 0, adim_ = 0;
  ParamId w_q_, w_m_, v_;
};

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam; increments the step counter once.
template <class T>
void adam_step(Parameters<T>& params, const Gradients<T>& grads, const AdamConfig& cfg) {
  check_shape(grads.size() == params.size(), "adam: gradient set does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    check_shape(grads.value(i).rows() == params.value(i).rows() && grads.value(i).cols() == params.value(i).cols(),
                "adam: shape mismatch on " + params.name(i));
  ++params.step;
  const double t = static_cast<double>(params.step);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& mo = params.moments()[i];
    const auto& g = grads.value(i);
    mo.m = b1 * mo.m + (T(1) - b1) * g;
    mo.v = b2 * mo.v + (T(1) - b2) * g.cwiseProduct(g);
    params.value(i).array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps);
  }
}

/// Rescales so the global norm is at most max_norm; returns the norm before.
template <class T>
double clip_grad_norm(Gradients<T>& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (norm > max_norm && norm > 0) grads.scale(static_cast<T>(max_norm / norm));
  return norm;
}

// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t probes = 0;
};

/// Loss callable: long double(const Parameters<double>&, Gradients<double>*).
/// It fills the analytic gradient when the pointer is non-null; the returned
/// value may be computed in extended precision so that differences of nearby
/// losses keep their low-order digits.
using LossFn = std::function<long double(const Parameters<double>&, Gradients<double>*)>;

/// Compares analytic gradients with five-point central differences of step
/// `step` on `probes` random coordinates of every tensor (all coordinates of
/// tensors no larger than that). Per-coordinate error is
/// |a - n| / max(|a|, |n|, 1e-8); the maximum is reported.
inline GradCheckResult grad_check(const LossFn& loss, Parameters<double>& params, std::size_t probes,
                                  Rng& rng, double step = 1e-5) {
  Gradients<double> analytic(params);
  const long double base = loss(params, &analytic);
  if (!std::isfinite(static_cast<double>(base))) throw std::runtime_error("grad_check: non-finite loss");
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params.value(pi);
    const auto count = static_cast<std::size_t>(value.size());
    std::vector<std::size_t> coords;
    if (count <= probes) {
      for (std::size_t k = 0; k < count; ++k) coords.push_back(k);
    } else {
      for (std::size_t k = 0; k < probes; ++k) coords.push_back(rng.index(count));
    }
    for (std::size_t k : coords) {
      double& x = value.data()[k];
      const double saved = x;
      auto at = [&](double offset) {
        x = saved + offset;
        const long double v = loss(params, nullptr);
        if (!std::isfinite(static_cast<double>(v))) throw std::runtime_error("grad_check: non-finite loss");
        return v;
      };
      const long double numeric_ld =
          (-at(2 * step) + 8 * at(step) - 8 * at(-step) + at(-2 * step)) / (12.0L * static_cast<long double>(step));
      x = saved;
      const double numeric = static_cast<double>(numeric_ld);
      const double a = analytic.value(pi).data()[k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.probes;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = params.name(pi);
      }
    }
  }
  return result;
}

}  // namespace form2seq::nn
