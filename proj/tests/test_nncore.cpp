#include <gtest/gtest.h>

#include <cmath>

#include "form2seq/nncore.hpp"

using namespace form2seq;
using namespace form2seq::nn;

namespace {

Mat<double> random_mat(Rng& rng, Index r, Index c, double a = 1.0) {
  Mat<double> m(r, c);
  init_uniform(m, rng, a);
  return m;
}

void randomize(Parameters<double>& p, Rng& rng) {
  for (std::size_t i = 0; i < p.size(); ++i) init_uniform(p.value(i), rng, 1.0);
}

// Scalar-loop LSTM step, written independently of the Eigen version.
void reference_step(const Mat<double>& wih, const Mat<double>& whh, const Mat<double>& b, const std::vector<double>& x,
                    std::vector<double>& h, std::vector<double>& c) {
  const std::size_t H = h.size();
  std::vector<double> a(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double s = b(static_cast<Index>(r), 0);
    for (std::size_t k = 0; k < x.size(); ++k) s += wih(static_cast<Index>(r), static_cast<Index>(k)) * x[k];
    for (std::size_t k = 0; k < H; ++k) s += whh(static_cast<Index>(r), static_cast<Index>(k)) * h[k];
    a[r] = s;
  }
  auto sg = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t k = 0; k < H; ++k) {
    const double i = sg(a[k]), f = sg(a[H + k]), g = std::tanh(a[2 * H + k]), o = sg(a[3 * H + k]);
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

}  // namespace

TEST(LstmStep, ZeroFixedPoint) {
  Parameters<double> p;
  Rng rng(1);
  Lstm<double> l(p, "l", 3, 2, rng);
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i).setZero();
  auto s = l.step(p, Vec<double>::Zero(3), Vec<double>::Zero(2), Vec<double>::Zero(2));
  EXPECT_EQ(s.h, Vec<double>::Zero(2));
  EXPECT_EQ(s.c, Vec<double>::Zero(2));
}

TEST(LstmStep, HalfGatesFromUnitCell) {
  Parameters<double> p;
  Rng rng(1);
  Lstm<double> l(p, "l", 3, 2, rng);
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i).setZero();
  auto s = l.step(p, Vec<double>::Zero(3), Vec<double>::Zero(2), Vec<double>::Ones(2));
  EXPECT_DOUBLE_EQ(s.c(0), 0.5);
  EXPECT_DOUBLE_EQ(s.c(1), 0.5);
  EXPECT_NEAR(s.h(0), 0.5 * std::tanh(0.5), 1e-15);
  EXPECT_NEAR(s.h(1), 0.2311, 1e-4);
}

TEST(LstmStep, MatchesScalarReference) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Parameters<double> p;
    Lstm<double> l(p, "l", 5, 4, rng);
    randomize(p, rng);
    Vec<double> x = random_mat(rng, 5, 1), h = random_mat(rng, 4, 1), c = random_mat(rng, 4, 1);
    auto s = l.step(p, x, h, c);
    std::vector<double> xs(x.data(), x.data() + 5), hs(h.data(), h.data() + 4), cs(c.data(), c.data() + 4);
    reference_step(p[l.w_ih()], p[l.w_hh()], p[l.bias()], xs, hs, cs);
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(s.h(k), hs[static_cast<std::size_t>(k)], 1e-14);
      EXPECT_NEAR(s.c(k), cs[static_cast<std::size_t>(k)], 1e-14);
    }
  }
}

TEST(LstmStep, ShapeErrors) {
  Parameters<double> p;
  Rng rng(1);
  Lstm<double> l(p, "l", 3, 2, rng);
  EXPECT_THROW(l.step(p, Vec<double>::Zero(4), Vec<double>::Zero(2), Vec<double>::Zero(2)), ShapeError);
  EXPECT_THROW(l.step(p, Vec<double>::Zero(3), Vec<double>::Zero(3), Vec<double>::Zero(2)), ShapeError);
}

TEST(LstmInit, FanInBoundsAndForgetBias) {
  Parameters<double> p;
  Rng rng(3);
  Lstm<double> l(p, "l", 9, 4, rng);
  EXPECT_LE(p[l.w_ih()].cwiseAbs().maxCoeff(), 1.0 / 3.0);
  EXPECT_LE(p[l.w_hh()].cwiseAbs().maxCoeff(), 0.5);
  EXPECT_EQ(p[l.bias()].block(0, 0, 4, 1), Mat<double>::Zero(4, 1));
  EXPECT_EQ(p[l.bias()].block(4, 0, 4, 1), Mat<double>::Ones(4, 1));
  EXPECT_EQ(p[l.bias()].block(8, 0, 8, 1), Mat<double>::Zero(8, 1));
}

TEST(Lstm, SequenceEqualsStepChain) {
  Rng rng(9);
  Parameters<double> p;
  Lstm<double> l(p, "l", 3, 5, rng);
  randomize(p, rng);
  Mat<double> x = random_mat(rng, 3, 6);
  LstmCache<double> cache;
  l.forward(p, x, cache);
  auto s = l.zero_state();
  for (Index t = 0; t < 6; ++t) {
    s = l.step(p, x.col(t), s.h, s.c);
    EXPECT_LT((s.h - cache.h.col(t)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((s.c - cache.c.col(t)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(BiLstm, LengthOneIsBothStepsOnSameElement) {
  Rng rng(2);
  Parameters<double> p;
  BiLstm<double> b(p, "b", 3, 4, rng);
  Mat<double> x = random_mat(rng, 3, 1);
  BiLstmCache<double> cache;
  Mat<double> out = b.forward(p, x, cache);
  ASSERT_EQ(out.rows(), 8);
  ASSERT_EQ(out.cols(), 1);
  auto f = b.forward_lstm().step(p, x.col(0), Vec<double>::Zero(4), Vec<double>::Zero(4));
  auto r = b.backward_lstm().step(p, x.col(0), Vec<double>::Zero(4), Vec<double>::Zero(4));
  EXPECT_LT((out.col(0).head(4) - f.h).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((out.col(0).tail(4) - r.h).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(b.forward(p, Mat<double>(3, 0), cache), std::invalid_argument);
}

TEST(BiLstm, EqualsTwoIndependentPasses) {
  Rng rng(4);
  Parameters<double> p;
  BiLstm<double> b(p, "b", 3, 4, rng);
  Mat<double> x = random_mat(rng, 3, 7);
  BiLstmCache<double> cache;
  Mat<double> out = b.forward(p, x, cache);
  ASSERT_EQ(out.cols(), 7);
  auto fs = b.forward_lstm().zero_state();
  auto bs = b.backward_lstm().zero_state();
  for (Index t = 0; t < 7; ++t) {
    fs = b.forward_lstm().step(p, x.col(t), fs.h, fs.c);
    EXPECT_LT((out.col(t).head(4) - fs.h).cwiseAbs().maxCoeff(), 1e-14);
  }
  for (Index t = 6; t >= 0; --t) {
    bs = b.backward_lstm().step(p, x.col(t), bs.h, bs.c);
    EXPECT_LT((out.col(t).tail(4) - bs.h).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(BiLstm, PalindromeWithTiedWeightsIsSymmetric) {
  Rng rng(6);
  Parameters<double> p;
  BiLstm<double> b(p, "b", 2, 3, rng);
  // Tie the backward LSTM to the forward one.
  for (const char* part : {".w_ih", ".w_hh", ".b"})
    p[*p.find(std::string("b.bwd") + part)] = p[*p.find(std::string("b.fwd") + part)];
  Mat<double> half = random_mat(rng, 2, 3);
  Mat<double> x(2, 5);
  x << half, half.col(1), half.col(0);  // columns a b c b a
  BiLstmCache<double> cache;
  Mat<double> out = b.forward(p, x, cache);
  for (Index t = 0; t < 5; ++t) {
    EXPECT_LT((out.col(t).head(3) - out.col(4 - t).tail(3)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Attention, SingletonMemory) {
  Rng rng(1);
  Parameters<double> p;
  AdditiveAttention<double> a(p, "a", 3, 4, 5, rng);
  Mat<double> m = random_mat(rng, 4, 1);
  auto [ctx, w] = a.attend(p, m, random_mat(rng, 3, 1).col(0));
  ASSERT_EQ(w.size(), 1);
  EXPECT_DOUBLE_EQ(w(0), 1.0);
  EXPECT_LT((ctx - m.col(0)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(a.attend(p, Mat<double>(4, 0), Vec<double>::Zero(3)), std::invalid_argument);
}

TEST(Attention, IdenticalRowsGiveUniformWeights) {
  Rng rng(2);
  Parameters<double> p;
  AdditiveAttention<double> a(p, "a", 3, 4, 5, rng);
  Mat<double> m = random_mat(rng, 4, 1).replicate(1, 6);
  auto [ctx, w] = a.attend(p, m, random_mat(rng, 3, 1).col(0));
  for (Index j = 0; j < 6; ++j) EXPECT_NEAR(w(j), 1.0 / 6, 1e-15);
}

TEST(Attention, HandSetTwoRowMemory) {
  Rng rng(3);
  Parameters<double> p;
  AdditiveAttention<double> a(p, "a", 1, 1, 2, rng);
  p[a.w_q()] << 1.0, -1.0;
  p[a.w_m()] << 0.5, 2.0;
  p[a.v()] << 1.0, 0.5;
  Mat<double> m(1, 2);
  m << 1.0, -1.0;
  Vec<double> q(1);
  q << 0.3;
  auto [ctx, w] = a.attend(p, m, q);
  const double s0 = std::tanh(0.3 + 0.5) + 0.5 * std::tanh(-0.3 + 2.0);
  const double s1 = std::tanh(0.3 - 0.5) + 0.5 * std::tanh(-0.3 - 2.0);
  const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  EXPECT_NEAR(w(0), w0, 1e-15);
  EXPECT_NEAR(w(1), 1 - w0, 1e-15);
  EXPECT_NEAR(ctx(0), w0 - (1 - w0), 1e-15);
}

TEST(Attention, WeightsAreADistribution) {
  Rng rng(4);
  Parameters<double> p;
  AdditiveAttention<double> a(p, "a", 3, 4, 5, rng);
  randomize(p, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Index T = 1 + static_cast<Index>(rng.index(12));
    Mat<double> m = random_mat(rng, 4, T, 10.0);
    AttentionCache<double> cache;
    a.forward(p, random_mat(rng, 3, 3, 10.0), m, cache);
    for (Index i = 0; i < 3; ++i) {
      EXPECT_GE(cache.weights.col(i).minCoeff(), 0.0);
      EXPECT_NEAR(cache.weights.col(i).sum(), 1.0, 1e-6);
    }
  }
}

TEST(SoftmaxXent, AnalyticValues) {
  auto u = softmax_xent<double>(Vec<double>::Zero(10), 3);
  EXPECT_NEAR(u.loss, std::log(10.0), 1e-15);
  Vec<double> l(3);
  l << 10, 0, 0;
  auto s = softmax_xent<double>(l, 0);
  EXPECT_NEAR(s.loss, std::log1p(2 * std::exp(-10.0)), 1e-15);
  EXPECT_NEAR(s.loss, 9.08e-5, 1e-7);
  EXPECT_THROW(softmax_xent<double>(l, 3), std::out_of_range);
  EXPECT_THROW(softmax_xent<double>(l, -1), std::out_of_range);
}

TEST(SoftmaxXent, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Vec<double> l = random_mat(rng, 7, 1, 3.0);
    const int t = static_cast<int>(rng.index(7));
    auto r = softmax_xent<double>(l, t);
    EXPECT_GE(r.loss, 0.0);
    for (Index k = 0; k < 7; ++k) {
      Vec<double> lp = l, lm = l;
      lp(k) += 1e-5;
      lm(k) -= 1e-5;
      const double num = (softmax_xent<double>(lp, t).loss - softmax_xent<double>(lm, t).loss) / 2e-5;
      EXPECT_LE(std::abs(num - r.grad(k)) / std::max({std::abs(num), std::abs(r.grad(k)), 1e-8}), 1e-6);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameters<double> p;
  auto id = p.add("w", 2, 2);
  p[id] << 1, 2, 3, 4;
  const Mat<double> before = p[id];
  Gradients<double> g(p);
  adam_step(p, g, {});
  EXPECT_EQ(p[id], before);
  EXPECT_EQ(p.step, 1);
}

TEST(Adam, FirstStepIsLrTimesSign) {
  Parameters<double> p;
  auto id = p.add("w", 1, 2);
  p[id] << 0.5, 0.5;
  Gradients<double> g(p);
  g[id] << 5.0, -0.01;
  adam_step(p, g, {});
  EXPECT_NEAR(p[id](0, 0) - 0.5, -1e-3, 1e-9);
  EXPECT_NEAR(p[id](0, 1) - 0.5, 1e-3, 1e-6);
}

TEST(Adam, TwoStepScalarTrajectory) {
  Parameters<double> p;
  auto id = p.add("w", 1, 1);
  p[id](0, 0) = 1.0;
  Gradients<double> g(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  double m = 0, v = 0, w = 1.0;
  const double grads[] = {2.0, -1.0};
  for (int t = 1; t <= 2; ++t) {
    const double gr = grads[t - 1];
    g[id](0, 0) = gr;
    adam_step(p, g, cfg);
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p[id](0, 0), w, 1e-14);
  }
}

TEST(Adam, DeterministicFromSameState) {
  Rng rng(8);
  Parameters<double> p;
  auto id = p.add("w", 3, 3);
  p[id] = random_mat(rng, 3, 3);
  Gradients<double> g(p);
  g[id] = random_mat(rng, 3, 3);
  auto q = p;
  adam_step(p, g, {});
  adam_step(q, g, {});
  EXPECT_EQ(p[id], q[id]);
  EXPECT_EQ(p.moments()[0].v, q.moments()[0].v);
}

TEST(Adam, ShapeMismatch) {
  Parameters<double> p, q;
  p.add("w", 2, 2);
  q.add("w", 2, 3);
  Gradients<double> g(q);
  EXPECT_THROW(adam_step(p, g, {}), ShapeError);
}

TEST(ClipGradNorm, ScalesOnlyAboveThreshold) {
  Parameters<double> p;
  auto id = p.add("w", 1, 2);
  Gradients<double> g(p);
  g[id] << 3, 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g[id](0, 0), 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.global_norm(), 1.0, 1e-15);
}

TEST(GradCheck, QuadraticIsExact) {
  Rng rng(1);
  Parameters<double> p;
  auto id = p.add("w", 4, 3);
  p[id] = random_mat(rng, 4, 3);
  LossFn loss = [&](const Parameters<double>& q, Gradients<double>* g) -> long double {
    if (g) (*g)[id] += q[id];
    return 0.5L * static_cast<long double>(q[id].squaredNorm());
  };
  auto r = grad_check(loss, p, 100, rng);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.probes, 12u);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Rng rng(1);
  Parameters<double> p;
  auto id = p.add("w", 2, 2);
  p[id] << 1, 2, 3, 4;
  LossFn loss = [&](const Parameters<double>& q, Gradients<double>* g) -> long double {
    if (g) {
      (*g)[id] += q[id];
      (*g)[id](1, 1) = 0;  // dropped
    }
    return 0.5L * static_cast<long double>(q[id].squaredNorm());
  };
  auto r = grad_check(loss, p, 10, rng);
  EXPECT_NEAR(r.max_rel_error, 1.0, 1e-6);
  EXPECT_EQ(r.worst_param, "w");
}

TEST(GradCheck, NonFiniteLossThrows) {
  Rng rng(1);
  Parameters<double> p;
  p.add("w", 1, 1);
  LossFn loss = [](const Parameters<double>&, Gradients<double>*) -> long double { return NAN; };
  EXPECT_THROW(grad_check(loss, p, 1, rng), std::runtime_error);
}

// Every layer against finite differences, through a random linear readout.
TEST(GradCheck, EveryLayer) {
  Rng rng(12);
  Parameters<double> p;
  Linear<double> lin(p, "lin", 3, 4, rng);
  BiLstm<double> bi(p, "bi", 4, 3, rng);
  AdditiveAttention<double> att(p, "att", 5, 6, 4, rng);
  Embedding<double> emb(p, "emb", 5, 7, rng);
  randomize(p, rng);
  const Mat<double> x = random_mat(rng, 3, 5);
  const Mat<double> readout = random_mat(rng, 6, 5);
  const int tokens[] = {1, 4, 0, 6, 2};
  const int targets[] = {0, 3, 5, 1, 2};

  auto run = [&](const Parameters<double>& q, Gradients<double>* g) -> double {
    const Mat<double> a = lin.forward(q, x);
    BiLstmCache<double> bc;
    const Mat<double> m = bi.forward(q, a, bc);  // 6 x 5
    Mat<double> queries(5, 5);
    for (Index i = 0; i < 5; ++i) queries.col(i) = emb.column(q, tokens[i]);
    AttentionCache<double> ac;
    const Mat<double> ctx = att.forward(q, queries, m, ac);  // 6 x 5
    const Mat<double> logits = ctx + readout.cwiseProduct(m);
    double loss = 0;
    Mat<double> dlogits(6, 5);
    for (Index i = 0; i < 5; ++i) {
      auto r = softmax_xent<double>(logits.col(i), targets[i]);
      loss += r.loss;
      dlogits.col(i) = r.grad;
    }
    if (g) {
      auto [dq, dm] = att.backward(q, ac, queries, m, dlogits, *g);
      dm += readout.cwiseProduct(dlogits);
      for (Index i = 0; i < 5; ++i) emb.accumulate(*g, tokens[i], dq.col(i));
      const Mat<double> da = bi.backward(q, bc, dm, *g);
      lin.backward(q, x, da, *g);
    }
    return loss;
  };
  LossFn loss = [&](const Parameters<double>& q, Gradients<double>* g) -> long double { return run(q, g); };
  auto r = grad_check(loss, p, 30, rng);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param;
}

TEST(Parameters, NamesAreUniqueAndOrdered) {
  Parameters<double> p;
  p.add("a", 1, 1);
  p.add("b", 2, 1);
  EXPECT_THROW(p.add("a", 1, 1), std::invalid_argument);
  EXPECT_EQ(p.name(1), "b");
  EXPECT_EQ(p.scalar_count(), 3u);
  EXPECT_EQ(p.moments()[1].m.rows(), 2);
}

TEST(Rng, ReproducibleStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
  Rng c(42);
  std::vector<int> v = {1, 2, 3, 4, 5, 6}, w = v;
  c.shuffle(v.begin(), v.end());
  Rng d(42);
  d.shuffle(w.begin(), w.end());
  EXPECT_EQ(v, w);
}
