#pragma once

#include <span>
#include <vector>

#include "pixeldyn/graph.hpp"
#include "pixeldyn/rng.hpp"
#include "pixeldyn/tensor.hpp"

namespace pixeldyn {

constexpr double kProbEps = 1e-7;

// Attention-gated recurrent canvas: each object writes its contribution into
// a latent state through a mask, and the final state is decoded to Bernoulli
// pixel probabilities.
struct RendererParams {
  Tensor w_alpha;  // D x 2
  Tensor b_alpha;  // D x 1
  Tensor w_x;      // D x 2
  Tensor b_x;      // D x 1
  Tensor w_v;      // P x D
  Tensor b_v;      // P x 1
  Tensor theta_x0; // D x 1

  int D() const { return w_alpha.rows(); }
  int P() const { return w_v.rows(); }
};

struct RendererGraph {
  Var w_alpha, b_alpha, w_x, b_x, w_v, b_v, theta_x0;
};

inline RendererGraph bind_renderer(Graph& g, const RendererParams& p) {
  return {g.param(p.w_alpha), g.param(p.b_alpha), g.param(p.w_x),
          g.param(p.b_x),     g.param(p.w_v),     g.param(p.b_v),
          g.param(p.theta_x0)};
}

// positions: one (2, batch) node per object, composited in order. If
// `states` is non-null the canvas state after each object is appended
// (x^0 .. x^N).
inline Var render_graph(Graph& g, const RendererGraph& r, const std::vector<Var>& positions,
                        int batch, std::vector<Var>* states = nullptr) {
  Var x = tanh(r.theta_x0);
  if (batch > 1) x = tile_cols(x, batch);
  if (states) states->push_back(x);
  for (const Var& a : positions) {
    Var alpha = sigmoid(matmul(r.w_alpha, a) + r.b_alpha);
    Var contrib = tanh(matmul(r.w_x, a) + r.b_x);
    x = (1.0 - alpha) * x + alpha * contrib;
    if (states) states->push_back(x);
  }
  return sigmoid(matmul(r.w_v, x) + r.b_v);
}

// Bernoulli log-likelihood of binary images under rendered probabilities,
// summed over pixels and batch columns. Probabilities are clamped away from
// the boundary so saturated pixels keep a finite loss.
inline Var image_loglik_graph(Graph& g, Var probs, Var images) {
  Var p = clamp(probs, kProbEps, 1.0 - kProbEps);
  Var v = images;
  return sum(v * log(p) + (1.0 - v) * log(1.0 - p));
}

// ---- plain, forward-only entry points --------------------------------------

inline Tensor render(const RendererParams& params, const Eigen::MatrixXd& positions) {
  Graph g;
  RendererGraph r = bind_renderer(g, params);
  std::vector<Var> pos;
  for (int n = 0; n < positions.rows(); ++n) {
    Tensor t(2, 1);
    t.v[0] = positions(n, 0);
    t.v[1] = positions(n, 1);
    pos.push_back(g.constant(std::move(t)));
  }
  return render_graph(g, r, pos, 1).val();
}

inline double log_likelihood_image(const Tensor& probs, std::span<const uint8_t> image) {
  if (probs.numel() != image.size()) throw ShapeError("log_likelihood_image: size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < image.size(); ++i) {
    if (image[i] != 0 && image[i] != 1)
      throw NumericError("log_likelihood_image: image must be binary");
    double p = std::min(std::max(probs.v[i], kProbEps), 1.0 - kProbEps);
    total += image[i] ? std::log(p) : std::log(1.0 - p);
  }
  return total;
}

inline std::vector<uint8_t> sample_image(const Tensor& probs, Rng& rng) {
  std::vector<uint8_t> img(probs.numel());
  for (size_t i = 0; i < img.size(); ++i) img[i] = rng.u01() <= probs.v[i] ? 1 : 0;
  return img;
}

}  // namespace pixeldyn
