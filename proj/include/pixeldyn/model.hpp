#pragma once

#include <string>
#include <vector>

#include "pixeldyn/inference_net.hpp"
#include "pixeldyn/lgssm.hpp"
#include "pixeldyn/renderer.hpp"

namespace pixeldyn {

// Generative parameters (lgssm + renderer) and inference parameters, plus the
// image geometry they were trained for.
struct Model {
  LgssmFree lgssm;
  RendererParams renderer;
  InferenceParams inference;
  int image_h = 0;
  int image_w = 0;
};

struct ParamEntry {
  std::string name;
  Tensor* tensor;
  bool is_lgssm;
};

// Stable, insertion-ordered registry over every trainable tensor; the
// optimizer state and the checkpoint block layout both key off this order.
inline std::vector<ParamEntry> collect_params(Model& m) {
  std::vector<ParamEntry> out;
  auto add = [&](const std::string& name, Tensor& t, bool lgssm) {
    out.push_back({name, &t, lgssm});
  };
  add("lgssm/delta", m.lgssm.delta, true);
  add("lgssm/u", m.lgssm.u, true);
  add("lgssm/sh_chol", m.lgssm.sh_chol, true);
  add("lgssm/sa_chol", m.lgssm.sa_chol, true);
  add("lgssm/pi_logits", m.lgssm.pi_logits, true);
  add("lgssm/mu", m.lgssm.mu, true);
  add("lgssm/sk_chol", m.lgssm.sk_chol, true);
  add("renderer/w_alpha", m.renderer.w_alpha, false);
  add("renderer/b_alpha", m.renderer.b_alpha, false);
  add("renderer/w_x", m.renderer.w_x, false);
  add("renderer/b_x", m.renderer.b_x, false);
  add("renderer/w_v", m.renderer.w_v, false);
  add("renderer/b_v", m.renderer.b_v, false);
  add("renderer/theta_x0", m.renderer.theta_x0, false);
  add("inference/w_beta", m.inference.w_beta, false);
  add("inference/b_beta", m.inference.b_beta, false);
  add("inference/w_s", m.inference.w_s, false);
  add("inference/b_s", m.inference.b_s, false);
  add("inference/w_mu", m.inference.w_mu, false);
  add("inference/b_mu", m.inference.b_mu, false);
  add("inference/w_sigma", m.inference.w_sigma, false);
  add("inference/b_sigma", m.inference.b_sigma, false);
  for (auto& [n, t] : m.inference.s0) add("inference/s0/" + std::to_string(n), t, false);
  return out;
}

}  // namespace pixeldyn
