#pragma once

#include <map>
#include <optional>
#include <vector>

#include "pixeldyn/graph.hpp"
#include "pixeldyn/tensor.hpp"

namespace pixeldyn {

constexpr double kSigmaFloor = 1e-4;
constexpr double kSigmaCeil = 10.0;

// Posterior network recurrent over time and object index. The state update
// mirrors the renderer's gating: an attention mask decides how much of the
// previous object's rolled-up state survives. Initial states are learned per
// supported object count.
struct InferenceParams {
  Tensor w_beta;  // S x (2S + P)
  Tensor b_beta;  // S x 1
  Tensor w_s;     // S x (2S + P)
  Tensor b_s;     // S x 1
  std::map<int, Tensor> s0;  // object count N -> (S, N), column n is phi_{s0^n}
  Tensor w_mu;     // 2 x S
  Tensor b_mu;     // 2 x 1
  Tensor w_sigma;  // 2 x S
  Tensor b_sigma;  // 2 x 1

  int S() const { return w_beta.rows(); }
  int P() const { return w_beta.cols() - 2 * S(); }
  bool supports(int n) const { return s0.count(n) > 0; }
};

struct InferenceGraph {
  Var w_beta, b_beta, w_s, b_s, w_mu, b_mu, w_sigma, b_sigma;
  Var s0;  // bound for one object count
  int N = 0;
};

inline InferenceGraph bind_inference(Graph& g, const InferenceParams& p, int N) {
  auto it = p.s0.find(N);
  if (it == p.s0.end())
    throw ShapeError("inference: unsupported object count " + std::to_string(N));
  InferenceGraph ig;
  ig.w_beta = g.param(p.w_beta);
  ig.b_beta = g.param(p.b_beta);
  ig.w_s = g.param(p.w_s);
  ig.b_s = g.param(p.b_s);
  ig.w_mu = g.param(p.w_mu);
  ig.b_mu = g.param(p.b_mu);
  ig.w_sigma = g.param(p.w_sigma);
  ig.b_sigma = g.param(p.b_sigma);
  ig.s0 = g.param(it->second);
  ig.N = N;
  return ig;
}

struct PosteriorNodes {
  // indexed [t][n]
  std::vector<std::vector<Var>> s;      // S x batch
  std::vector<std::vector<Var>> mu;     // 2 x batch
  std::vector<std::vector<Var>> sigma;  // 2 x batch
};

// frames: one (P, batch) node per time-step. `init_override` replaces the
// learned tanh(phi_{s0^n}) initial states with externally supplied state
// slices (one (S, batch) node per object); used for warm-in.
inline PosteriorNodes infer_graph(Graph& g, const InferenceGraph& ig,
                                  const std::vector<Var>& frames,
                                  const std::vector<Var>* init_override = nullptr) {
  const int T = static_cast<int>(frames.size());
  const int N = ig.N;
  const int S = ig.w_beta.val().rows();
  const int batch = frames[0].val().cols();

  std::vector<Var> s_prev_time(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    if (init_override) {
      s_prev_time[static_cast<size_t>(n)] = (*init_override)[static_cast<size_t>(n)];
    } else {
      Var s0n = tanh(slice(ig.s0, 0, S, n, n + 1));
      s_prev_time[static_cast<size_t>(n)] = batch > 1 ? tile_cols(s0n, batch) : s0n;
    }
  }

  PosteriorNodes out;
  out.s.resize(static_cast<size_t>(T));
  out.mu.resize(static_cast<size_t>(T));
  out.sigma.resize(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    Var s_prev_obj = g.constant(Tensor(S, batch));  // s_t^0 = 0
    for (int n = 0; n < N; ++n) {
      Var inp = concat_rows(s_prev_time[static_cast<size_t>(n)],
                            concat_rows(s_prev_obj, frames[static_cast<size_t>(t)]));
      Var beta = sigmoid(matmul(ig.w_beta, inp) + ig.b_beta);
      Var contrib = tanh(matmul(ig.w_s, inp) + ig.b_s);
      Var s = (1.0 - beta) * s_prev_obj + beta * contrib;
      Var mu = matmul(ig.w_mu, s) + ig.b_mu;
      Var sigma = clamp(exp(0.5 * (matmul(ig.w_sigma, s) + ig.b_sigma)), kSigmaFloor, kSigmaCeil);
      out.s[static_cast<size_t>(t)].push_back(s);
      out.mu[static_cast<size_t>(t)].push_back(mu);
      out.sigma[static_cast<size_t>(t)].push_back(sigma);
      s_prev_time[static_cast<size_t>(n)] = s;
      s_prev_obj = s;
    }
  }
  return out;
}

// ---- value-level wrapper ----------------------------------------------------

struct PosteriorOutput {
  // indexed [t][n], each entry a column per batch element
  std::vector<std::vector<Tensor>> s;
  std::vector<std::vector<Tensor>> mu;
  std::vector<std::vector<Tensor>> sigma;
};

// Forward-only inference. `frames` holds T flattened row-major images
// (P values each, one column). Optional initial-state override as above.
inline PosteriorOutput infer(const InferenceParams& params, const std::vector<Tensor>& frames,
                             int N, const std::vector<Tensor>* init_override = nullptr) {
  Graph g;
  InferenceGraph ig = bind_inference(g, params, N);
  std::vector<Var> fv;
  fv.reserve(frames.size());
  for (const Tensor& f : frames) fv.push_back(g.constant(f));
  std::vector<Var> iv;
  const std::vector<Var>* ivp = nullptr;
  if (init_override) {
    for (const Tensor& t : *init_override) iv.push_back(g.constant(t));
    ivp = &iv;
  }
  PosteriorNodes nodes = infer_graph(g, ig, fv, ivp);
  PosteriorOutput out;
  out.s.resize(nodes.s.size());
  out.mu.resize(nodes.mu.size());
  out.sigma.resize(nodes.sigma.size());
  for (size_t t = 0; t < nodes.s.size(); ++t)
    for (int n = 0; n < N; ++n) {
      out.s[t].push_back(nodes.s[t][static_cast<size_t>(n)].val());
      out.mu[t].push_back(nodes.mu[t][static_cast<size_t>(n)].val());
      out.sigma[t].push_back(nodes.sigma[t][static_cast<size_t>(n)].val());
    }
  return out;
}

// a = mu + sigma o eps, elementwise over every (t, n).
inline std::vector<std::vector<Tensor>> sample_positions(const PosteriorOutput& out,
                                                         const std::vector<std::vector<Tensor>>& noise) {
  std::vector<std::vector<Tensor>> a(out.mu.size());
  for (size_t t = 0; t < out.mu.size(); ++t)
    for (size_t n = 0; n < out.mu[t].size(); ++n)
      a[t].push_back(gaussian_sample(out.mu[t][n], out.sigma[t][n], noise[t][n]));
  return a;
}

// Analytic log q(a | v): a sum of diagonal-Gaussian log densities.
inline double log_q(const PosteriorOutput& out, const std::vector<std::vector<Tensor>>& a) {
  double total = 0.0;
  for (size_t t = 0; t < out.mu.size(); ++t)
    for (size_t n = 0; n < out.mu[t].size(); ++n) {
      const Tensor& mu = out.mu[t][n];
      const Tensor& sigma = out.sigma[t][n];
      const Tensor& at = a[t][n];
      for (size_t i = 0; i < mu.numel(); ++i) {
        double z = (at.v[i] - mu.v[i]) / sigma.v[i];
        total += -0.5 * z * z - std::log(sigma.v[i]) - 0.5 * kLog2Pi;
      }
    }
  return total;
}

// Graph version over matching (t, n) node grids; returns a scalar node
// summed over time, objects and batch columns.
inline Var log_q_graph(Graph& g, const PosteriorNodes& post,
                       const std::vector<std::vector<Var>>& a) {
  Var total{};
  bool first = true;
  for (size_t t = 0; t < post.mu.size(); ++t)
    for (size_t n = 0; n < post.mu[t].size(); ++n) {
      Var z = (a[t][n] - post.mu[t][n]) / post.sigma[t][n];
      Var term = sum(-0.5 * z * z - log(post.sigma[t][n]) - 0.5 * kLog2Pi);
      total = first ? term : total + term;
      first = false;
    }
  return total;
}

}  // namespace pixeldyn
