#pragma once

#include <cmath>
#include <vector>

#include "pixeldyn/tensor.hpp"

namespace pixeldyn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second-moment accumulators for one group of parameter tensors.
// Accumulator shapes mirror the parameters; step counts completed updates.
struct AdamState {
  AdamConfig cfg;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  int64_t step = 0;

  void init(const std::vector<const Tensor*>& params) {
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
      m.emplace_back(p->rows(), p->cols());
      v.emplace_back(p->rows(), p->cols());
    }
    step = 0;
  }
};

// Bias-corrected Adam update, applied in place. Parameter, gradient and
// accumulator lists must line up element for element.
inline void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i]))
      throw ShapeError("adam_step: shape mismatch in group " + std::to_string(i));
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (size_t k = 0; k < p.numel(); ++k) {
      m.v[k] = b1 * m.v[k] + (1.0 - b1) * g.v[k];
      v.v[k] = b2 * v.v[k] + (1.0 - b2) * g.v[k] * g.v[k];
      double mhat = m.v[k] / corr1;
      double vhat = v.v[k] / corr2;
      p.v[k] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.epsilon);
    }
  }
}

// Global-norm gradient clipping; returns the pre-clip norm. max_norm <= 0
// disables clipping (used by gradient-check tests).
inline double clip_global_norm(std::vector<Tensor*>& grads, double max_norm) {
  double sq = 0.0;
  for (Tensor* g : grads)
    for (double x : g->v) sq += x * x;
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (Tensor* g : grads)
      for (double& x : g->v) x *= scale;
  }
  return norm;
}

}  // namespace pixeldyn
