#include <gtest/gtest.h>

#include "pixeldyn/edlstm.hpp"

#include "oracles.hpp"

using namespace pixeldyn;

namespace {

EdLstmParams tiny_params(uint64_t seed, int pixels = 16, int enc = 6, int hidden = 5) {
  return initialize_edlstm(seed, pixels, enc, hidden, 4, 4);
}

Corpus tiny_corpus(int seqs) {
  DatasetConfig cfg;
  cfg.T = 6;
  cfg.H = 8;
  cfg.W = 8;
  cfg.R = 2;
  cfg.object_counts = {1};
  cfg.train_per_count = seqs;
  cfg.test_per_count = 1;
  cfg.seed = 31;
  return generate_dataset(cfg).first;
}

}  // namespace

TEST(EdLstm, ZeroWeightsGiveHalfProbabilities) {
  EdLstmParams p = tiny_params(1);
  for (Tensor* t : {&p.enc_w, &p.enc_b, &p.lstm_w, &p.lstm_b, &p.dec_w, &p.dec_b}) t->fill(0.0);
  EdLstmState st{Tensor(p.hidden(), 1), Tensor(p.hidden(), 1)};
  Tensor input(p.P(), 1);
  input.v[3] = 1.0;
  auto [next, probs] = edlstm_step(p, st, input);
  for (double x : probs.v) EXPECT_DOUBLE_EQ(x, 0.5);
}

TEST(EdLstm, StepDeterministic) {
  EdLstmParams p = tiny_params(2);
  EdLstmState st{Tensor(p.hidden(), 1), Tensor(p.hidden(), 1)};
  Rng rng(3);
  Tensor input(p.P(), 1);
  for (auto& v : input.v) v = rng.u01() < 0.4 ? 1.0 : 0.0;
  auto [s1, p1] = edlstm_step(p, st, input);
  auto [s2, p2] = edlstm_step(p, st, input);
  for (size_t i = 0; i < p1.numel(); ++i) EXPECT_DOUBLE_EQ(p1.v[i], p2.v[i]);
  for (size_t i = 0; i < s1.h.numel(); ++i) EXPECT_DOUBLE_EQ(s1.h.v[i], s2.h.v[i]);
}

TEST(EdLstm, StepGradientMatchesFiniteDifferences) {
  Rng rng(5);
  EdLstmParams base = tiny_params(4, 9, 4, 3);
  Tensor input(9, 1);
  for (auto& v : input.v) v = rng.u01() < 0.5 ? 1.0 : 0.0;
  Tensor target(9, 1);
  for (auto& v : target.v) v = rng.u01() < 0.5 ? 1.0 : 0.0;

  auto entries_of = [](EdLstmParams& p) { return collect_edlstm_params(p); };
  std::vector<double> flat;
  for (auto& e : entries_of(base)) flat.insert(flat.end(), e.tensor->v.begin(), e.tensor->v.end());

  auto value = [&](const std::vector<double>& x) -> double {
    EdLstmParams p = base;
    size_t i = 0;
    for (auto& e : collect_edlstm_params(p))
      for (auto& v : e.tensor->v) v = x[i++];
    Graph g;
    EdLstmGraph eg = bind_edlstm(g, p);
    EdLstmStateNodes st{g.constant(Tensor(p.hidden(), 1)), g.constant(Tensor(p.hidden(), 1))};
    auto [next, probs] = edlstm_step_graph(g, eg, st, g.constant(input));
    // two chained steps so the cell recurrence contributes
    auto [next2, probs2] = edlstm_step_graph(g, eg, next, probs);
    return image_loglik_graph(g, probs2, g.constant(target)).val().v[0];
  };

  Graph g;
  EdLstmGraph eg = bind_edlstm(g, base);
  EdLstmStateNodes st{g.constant(Tensor(base.hidden(), 1)), g.constant(Tensor(base.hidden(), 1))};
  auto [next, probs] = edlstm_step_graph(g, eg, st, g.constant(input));
  auto [next2, probs2] = edlstm_step_graph(g, eg, next, probs);
  backward(image_loglik_graph(g, probs2, g.constant(target)));
  std::vector<double> analytic;
  for (Var v : {eg.enc_w, eg.enc_b, eg.lstm_w, eg.lstm_b, eg.dec_w, eg.dec_b})
    analytic.insert(analytic.end(), g.grad(v).v.begin(), g.grad(v).v.end());

  auto fd = oracles::fd_gradient(value, flat, 1e-6);
  EXPECT_LT(oracles::max_rel_error(analytic, fd, 1e-4), 1e-4);
}

TEST(EdLstm, GenerateShapesAndRange) {
  EdLstmParams p = tiny_params(6);
  Rng rng(7);
  std::vector<Tensor> obs;
  for (int t = 0; t < 5; ++t) {
    Tensor f(p.P(), 1);
    for (auto& v : f.v) v = rng.u01() < 0.3 ? 1.0 : 0.0;
    obs.push_back(std::move(f));
  }
  auto gen = edlstm_generate(p, obs, 7);
  ASSERT_EQ(gen.size(), 7u);
  for (const Tensor& fr : gen)
    for (double x : fr.v) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  EXPECT_THROW(edlstm_generate(p, obs, 0), ConfigError);
}

// Teacher-forced and closed-loop runs see identical inputs over the observed
// window, so the warmed state must agree bitwise.
TEST(EdLstm, TeacherForcedPrefixMatchesClosedLoop) {
  EdLstmParams p = tiny_params(8);
  Rng rng(9);
  std::vector<Tensor> obs;
  for (int t = 0; t < 4; ++t) {
    Tensor f(p.P(), 1);
    for (auto& v : f.v) v = rng.u01() < 0.4 ? 1.0 : 0.0;
    obs.push_back(f);
  }
  // drive two explicit step sequences with the same inputs
  EdLstmState a{Tensor(p.hidden(), 1), Tensor(p.hidden(), 1)};
  EdLstmState b = a;
  Tensor zero(p.P(), 1);
  Tensor pa, pb;
  std::tie(a, pa) = edlstm_step(p, a, zero);
  std::tie(b, pb) = edlstm_step(p, b, zero);
  for (const Tensor& f : obs) {
    std::tie(a, pa) = edlstm_step(p, a, f);
    std::tie(b, pb) = edlstm_step(p, b, f);
  }
  for (size_t i = 0; i < a.h.numel(); ++i) {
    EXPECT_DOUBLE_EQ(a.h.v[i], b.h.v[i]);
    EXPECT_DOUBLE_EQ(a.c.v[i], b.c.v[i]);
  }
}

TEST(EdLstm, InitializationPolicy) {
  EdLstmParams p = initialize_edlstm(11, 100, 100, 25, 10, 10);
  for (double x : p.enc_b.v) EXPECT_DOUBLE_EQ(x, 0.0);
  for (double x : p.lstm_b.v) EXPECT_DOUBLE_EQ(x, 0.0);
  double sum = 0, sq = 0;
  for (double x : p.enc_w.v) {
    sum += x;
    sq += x * x;
  }
  double mean = sum / p.enc_w.numel();
  double sd = std::sqrt(sq / p.enc_w.numel() - mean * mean);
  EXPECT_NEAR(sd, 0.01, 0.0007);  // d = 100 * 100
}

TEST(EdLstm, ZeroIterationsReturnsInit) {
  Corpus corpus = tiny_corpus(3);
  EdLstmParams p = initialize_edlstm(12, corpus.H * corpus.W, 6, 5, corpus.H, corpus.W);
  EdLstmParams before = p;
  EdLstmConfig cfg;
  cfg.enc_dim = 6;
  cfg.hidden = 5;
  cfg.iterations = 0;
  cfg.batch = 2;
  EdLstmParams after = train_edlstm(cfg, corpus, std::move(p));
  auto ea = collect_edlstm_params(before);
  auto eb = collect_edlstm_params(after);
  for (size_t i = 0; i < ea.size(); ++i)
    for (size_t j = 0; j < ea[i].tensor->numel(); ++j)
      EXPECT_DOUBLE_EQ(ea[i].tensor->v[j], eb[i].tensor->v[j]);
}

TEST(EdLstm, TeacherForcedLossDecreases) {
  Corpus corpus = tiny_corpus(6);
  EdLstmParams p = initialize_edlstm(13, corpus.H * corpus.W, 32, 32, corpus.H, corpus.W);
  EdLstmConfig cfg;
  cfg.enc_dim = 32;
  cfg.hidden = 32;
  cfg.iterations = 500;
  cfg.batch = 4;
  cfg.seed = 13;
  std::vector<double> losses;
  EdLstmHooks hooks;
  hooks.on_log = [&](int64_t, double nll) { losses.push_back(nll); };
  train_edlstm(cfg, corpus, std::move(p), hooks);
  double early = losses[0];
  double late = losses.back();
  EXPECT_LT(late, 0.5 * early);  // >= 50% improvement at toy scale
}

TEST(EdLstm, DeterministicTraining) {
  Corpus corpus = tiny_corpus(4);
  auto run = [&] {
    EdLstmParams p = initialize_edlstm(14, corpus.H * corpus.W, 6, 5, corpus.H, corpus.W);
    EdLstmConfig cfg;
    cfg.enc_dim = 6;
    cfg.hidden = 5;
    cfg.iterations = 5;
    cfg.batch = 2;
    cfg.seed = 99;
    std::vector<double> losses;
    EdLstmHooks hooks;
    hooks.on_log = [&](int64_t, double nll) { losses.push_back(nll); };
    train_edlstm(cfg, corpus, std::move(p), hooks);
    return losses;
  };
  auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(EdLstm, CheckpointRoundTrip) {
  EdLstmParams p = tiny_params(15);
  std::string path = testing::TempDir() + "/edlstm.pdyc";
  save_edlstm(path, p, 123, {0.5, 0.4});
  EdLstmParams back = load_edlstm(path);
  EXPECT_EQ(back.image_h, p.image_h);
  auto ea = collect_edlstm_params(p);
  auto eb = collect_edlstm_params(back);
  for (size_t i = 0; i < ea.size(); ++i)
    for (size_t j = 0; j < ea[i].tensor->numel(); ++j)
      EXPECT_DOUBLE_EQ(ea[i].tensor->v[j], eb[i].tensor->v[j]);
}
