#include <gtest/gtest.h>

#include "pixeldyn/adam.hpp"
#include "pixeldyn/graph.hpp"
#include "pixeldyn/rng.hpp"

#include "oracles.hpp"

using namespace pixeldyn;

TEST(Graph, SquareGradient) {
  Graph g;
  Var x = g.param(Tensor::scalar(3.0));
  Var y = x * x;
  backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x).v[0], 6.0);
}

TEST(Graph, SigmoidGradientAtZero) {
  Graph g;
  Var x = g.param(Tensor::scalar(0.0));
  Var y = sigmoid(x);
  backward(y);
  EXPECT_NEAR(g.grad(x).v[0], 0.25, 1e-15);
}

TEST(Graph, NonScalarBackwardRejected) {
  Graph g;
  Var x = g.param(Tensor(2, 2));
  Var y = x + x;
  EXPECT_THROW(backward(y), NumericError);
}

// Random two-layer tanh network, gradients against central differences.
TEST(Graph, TwoLayerTanhNetworkMatchesFiniteDifferences) {
  Rng rng(17);
  // 20 parameters: W1 (3x2), b1 (3), W2 (1x3), b2 (1), x (2), target scalar head
  std::vector<double> theta(20);
  for (auto& t : theta) t = rng.normal() * 0.8;

  auto eval = [&](const std::vector<double>& p) -> double {
    Graph g;
    Tensor w1(3, 2), b1(3, 1), w2(1, 3), b2(1, 1), x(2, 1);
    size_t i = 0;
    for (auto& v : w1.v) v = p[i++];
    for (auto& v : b1.v) v = p[i++];
    for (auto& v : w2.v) v = p[i++];
    for (auto& v : b2.v) v = p[i++];
    for (auto& v : x.v) v = p[i++];
    Var vx = g.param(x);
    Var h = tanh(matmul(g.param(w1), vx) + g.param(b1));
    Var o = tanh(matmul(g.param(w2), h) + g.param(b2));
    return sum(o * o).val().v[0];
  };

  Graph g;
  // rebuild with bound params to extract analytic gradient
  Tensor w1(3, 2), b1(3, 1), w2(1, 3), b2(1, 1), x(2, 1);
  size_t i = 0;
  for (auto& v : w1.v) v = theta[i++];
  for (auto& v : b1.v) v = theta[i++];
  for (auto& v : w2.v) v = theta[i++];
  for (auto& v : b2.v) v = theta[i++];
  for (auto& v : x.v) v = theta[i++];
  Var pw1 = g.param(w1), pb1 = g.param(b1), pw2 = g.param(w2), pb2 = g.param(b2), px = g.param(x);
  Var h = tanh(matmul(pw1, px) + pb1);
  Var o = tanh(matmul(pw2, h) + pb2);
  backward(sum(o * o));

  std::vector<double> analytic;
  for (Var v : {pw1, pb1, pw2, pb2, px})
    for (double d : g.grad(v).v) analytic.push_back(d);

  auto fd = oracles::fd_gradient(eval, theta, 1e-5);
  EXPECT_LT(oracles::max_rel_error(analytic, fd), 1e-5);
}

// Every differentiable op kind against central differences at random points.
TEST(Graph, PerOpGradientsMatchFiniteDifferences) {
  Rng rng(99);
  struct Case {
    const char* name;
    // builds a scalar head from a single parameter tensor
    std::function<Var(Graph&, Var)> head;
    // admissible random entries
    std::function<double()> draw;
    int r, c;
  };
  auto unit = [&] { return rng.normal(); };
  auto positive = [&] { return 0.5 + std::abs(rng.normal()); };

  std::vector<Case> cases;
  cases.push_back({"add", [](Graph& g, Var x) { return sum(x + x); }, unit, 3, 4});
  cases.push_back({"sub", [](Graph& g, Var x) { return sum((x - 0.5) * x); }, unit, 3, 4});
  cases.push_back({"mul_bcast_col",
                   [](Graph& g, Var x) {
                     Var col = slice(x, 0, x.val().rows(), 0, 1);
                     return sum(x * col);
                   },
                   unit, 3, 4});
  cases.push_back({"div",
                   [](Graph& g, Var x) {
                     Var c = g.constant(Tensor::scalar(2.0));
                     return sum(x / (x * x + 1.0) + x / c);
                   },
                   unit, 3, 3});
  cases.push_back({"matmul",
                   [](Graph& g, Var x) { return sum(matmul(x, transpose(x))); }, unit, 3, 4});
  cases.push_back({"tanh", [](Graph& g, Var x) { return sum(tanh(x)); }, unit, 2, 5});
  cases.push_back({"sigmoid", [](Graph& g, Var x) { return sum(sigmoid(x)); }, unit, 2, 5});
  cases.push_back({"exp", [](Graph& g, Var x) { return sum(exp(x)); }, unit, 2, 3});
  cases.push_back({"log", [](Graph& g, Var x) { return sum(log(x)); }, positive, 2, 3});
  cases.push_back({"concat_slice",
                   [](Graph& g, Var x) {
                     Var y = concat_rows(x, x * 2.0);
                     return sum(slice(y, 1, 4, 0, 2) * 1.5);
                   },
                   unit, 3, 2});
  cases.push_back({"clamp",
                   [](Graph& g, Var x) { return sum(clamp(x, -10.0, 10.0) * x); }, unit, 2, 3});
  cases.push_back({"tile",
                   [](Graph& g, Var x) {
                     Var col = slice(x, 0, x.val().rows(), 0, 1);
                     return sum(tile_cols(col, 5) * 0.7);
                   },
                   unit, 4, 1});
  cases.push_back({"logsumexp",
                   [](Graph& g, Var x) { return sum(logsumexp_rows(x)); }, unit, 3, 4});

  for (const auto& tc : cases) {
    for (int rep = 0; rep < 10; ++rep) {
      Tensor t(tc.r, tc.c);
      for (auto& v : t.v) v = tc.draw();
      std::vector<double> flat(t.v.begin(), t.v.end());

      Graph g;
      Var x = g.param(t);
      Var head = tc.head(g, x);
      backward(head);
      std::vector<double> analytic(g.grad(x).v.begin(), g.grad(x).v.end());

      auto fd = oracles::fd_gradient(
          [&](const std::vector<double>& p) {
            Graph g2;
            Tensor t2(tc.r, tc.c);
            std::copy(p.begin(), p.end(), t2.v.begin());
            Var x2 = g2.param(t2);
            return tc.head(g2, x2).val().v[0];
          },
          flat, 1e-6);
      EXPECT_LT(oracles::max_rel_error(analytic, fd), 1e-5) << tc.name << " rep " << rep;
    }
  }
}

// backward of f + g equals backward of f plus backward of g.
TEST(Graph, BackwardIsLinear) {
  Rng rng(5);
  Tensor t = rng.normal_tensor(3, 3);
  Graph g;
  Var x = g.param(t);
  Var f = sum(tanh(x));
  Var h = sum(x * x);
  Var both = f + h;

  backward(f);
  Tensor gf = g.grad(x);
  backward(h);
  Tensor gh = g.grad(x);
  backward(both);
  Tensor gsum = g.grad(x);
  for (size_t i = 0; i < gsum.numel(); ++i)
    EXPECT_NEAR(gsum.v[i], gf.v[i] + gh.v[i], 1e-14);
}

TEST(Adam, DefaultsAndFirstStep) {
  AdamConfig cfg;  // lr 0.001, beta1 0.9, beta2 0.999, eps 1e-8
  EXPECT_DOUBLE_EQ(cfg.lr, 0.001);
  EXPECT_DOUBLE_EQ(cfg.beta1, 0.9);
  EXPECT_DOUBLE_EQ(cfg.beta2, 0.999);
  EXPECT_DOUBLE_EQ(cfg.epsilon, 1e-8);

  Tensor p = Tensor::scalar(1.0);
  Tensor grad = Tensor::scalar(1.0);
  AdamState st;
  st.init({&p});
  std::vector<Tensor*> params{&p};
  std::vector<const Tensor*> grads{&grad};
  adam_step(params, grads, st);
  // bias-corrected mhat = vhat = 1 on the first step
  EXPECT_NEAR(p.v[0], 1.0 - 0.001 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p(4, 1);
  p.v = {1.0, -2.0, 0.5, 3.0};
  Tensor zero(4, 1);
  AdamState st;
  st.init({&p});
  std::vector<Tensor*> params{&p};
  std::vector<const Tensor*> grads{&zero};
  Tensor before = p;
  adam_step(params, grads, st);
  for (size_t i = 0; i < p.numel(); ++i) EXPECT_DOUBLE_EQ(p.v[i], before.v[i]);
}

TEST(Adam, DeterministicGivenSameInputs) {
  auto run = [] {
    Tensor p(3, 1);
    p.v = {0.3, -0.7, 1.1};
    Tensor g(3, 1);
    g.v = {0.05, -0.2, 0.4};
    AdamState st;
    st.init({&p});
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{&g};
    for (int i = 0; i < 7; ++i) adam_step(params, grads, st);
    return p;
  };
  Tensor a = run(), b = run();
  for (size_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(a.v[i], b.v[i]);
}

TEST(Adam, ShapeMismatchRejected) {
  Tensor p(3, 1), g(2, 1);
  AdamState st;
  st.init({&p});
  std::vector<Tensor*> params{&p};
  std::vector<const Tensor*> grads{&g};
  EXPECT_THROW(adam_step(params, grads, st), ShapeError);
}

TEST(GaussianSample, ZeroNoiseIsMean) {
  Tensor mean(3, 1);
  mean.v = {1.0, 2.0, 3.0};
  Tensor std(3, 1);
  std.fill(0.5);
  Tensor noise(3, 1);
  Tensor s = gaussian_sample(mean, std, noise);
  for (size_t i = 0; i < s.numel(); ++i) EXPECT_DOUBLE_EQ(s.v[i], mean.v[i]);
}

TEST(GaussianSample, StandardizedIdentity) {
  Tensor mean(4, 1);
  Tensor std(4, 1);
  std.fill(1.0);
  Tensor noise(4, 1);
  noise.v = {0.3, -1.2, 0.0, 2.5};
  Tensor s = gaussian_sample(mean, std, noise);
  for (size_t i = 0; i < s.numel(); ++i) EXPECT_DOUBLE_EQ(s.v[i], noise.v[i]);
}

TEST(GaussianSample, NonPositiveStdRejected) {
  Tensor mean(2, 1), std(2, 1), noise(2, 1);
  std.v = {1.0, 0.0};
  EXPECT_THROW(gaussian_sample(mean, std, noise), NumericError);
}

TEST(GaussianSample, EmpiricalMomentsMatch) {
  const int n = 100000;
  const double mu = 0.7, sd = 1.3;
  Rng rng(123);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    Tensor m = Tensor::scalar(mu), s = Tensor::scalar(sd), e = Tensor::scalar(rng.normal());
    double x = gaussian_sample(m, s, e).v[0];
    sum += x;
    sumsq += x * x;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  double tol = 3.0 * sd / std::sqrt(static_cast<double>(n));
  EXPECT_NEAR(mean, mu, tol);
  EXPECT_NEAR(std::sqrt(var), sd, 3.0 * sd / std::sqrt(2.0 * n));
}

TEST(GaussianSample, DifferentiableThroughMeanAndStd) {
  Graph g;
  Var mean = g.param(Tensor::scalar(0.4));
  Var sd = g.param(Tensor::scalar(0.9));
  Var eps = g.constant(Tensor::scalar(1.7));
  Var s = gaussian_sample(mean, sd, eps);
  backward(sum(s * s));
  // d/dmean (mean + sd*eps)^2 = 2(mean + sd*eps); d/dsd = 2(mean+sd*eps)*eps
  double v = 0.4 + 0.9 * 1.7;
  EXPECT_NEAR(g.grad(mean).v[0], 2 * v, 1e-12);
  EXPECT_NEAR(g.grad(sd).v[0], 2 * v * 1.7, 1e-12);
}
