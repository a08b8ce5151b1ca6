#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pixeldyn/adam.hpp"
#include "pixeldyn/checkpoint.hpp"
#include "pixeldyn/dataset.hpp"
#include "pixeldyn/model.hpp"

namespace pixeldyn {

// Variational training: freeze phase with fixed LGSSM parameters, KL
// annealing from beta_start down to beta_end (log-linear over the anneal
// window), then joint training to the iteration budget.
struct TrainConfig {
  int batch = 20;
  int64_t iterations = 200000;
  int64_t freeze_iters = 10000;
  int64_t anneal_start = 10000;
  int64_t anneal_end = 50000;
  double beta_start = 100.0;
  double beta_end = 1.0;
  int mc_samples = 1;
  double lr = 0.001;
  uint64_t seed = 1;
  int64_t checkpoint_interval = 5000;
  double grad_clip = 100.0;  // global norm; <= 0 disables
  int s_dim = 1024;
  int d_dim = 1024;
  int k_mixture = 2;

  void validate() const {
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (beta_end > beta_start) throw ConfigError("train: beta_end must be <= beta_start");
    if (mc_samples < 1) throw ConfigError("train: mc_samples must be >= 1");
    if (anneal_end < anneal_start) throw ConfigError("train: anneal window inverted");
    if (iterations < 0 || freeze_iters < 0) throw ConfigError("train: negative iteration count");
  }
};

inline double anneal(int64_t iter, const TrainConfig& cfg) {
  if (iter < cfg.anneal_start) return cfg.beta_start;
  if (iter >= cfg.anneal_end) return cfg.beta_end;
  double s = static_cast<double>(iter - cfg.anneal_start) /
             static_cast<double>(cfg.anneal_end - cfg.anneal_start);
  return std::exp(std::log(cfg.beta_start) + s * (std::log(cfg.beta_end) - std::log(cfg.beta_start)));
}

// Weight matrices from N(0, 1/sqrt(d)) with d the number of elements of the
// matrix; biases zero. LGSSM starts as a smooth near-static prior: delta=0.1,
// u=0, sigma_h=0.001 I, sigma_a=I, component means with standard-normal
// positions and zero velocities, unit component covariances, uniform weights.
inline Model initialize(uint64_t seed, int pixels, int s_dim, int d_dim, int k_mixture,
                        const std::vector<int>& object_counts, int image_h, int image_w) {
  Rng rng(seed);
  Model m;
  m.image_h = image_h;
  m.image_w = image_w;

  auto weight = [&](int r, int c) {
    Tensor t(r, c);
    double sd = 1.0 / std::sqrt(static_cast<double>(t.numel()));
    for (auto& v : t.v) v = sd * rng.normal();
    return t;
  };

  m.renderer.w_alpha = weight(d_dim, 2);
  m.renderer.b_alpha = Tensor(d_dim, 1);
  m.renderer.w_x = weight(d_dim, 2);
  m.renderer.b_x = Tensor(d_dim, 1);
  m.renderer.w_v = weight(pixels, d_dim);
  m.renderer.b_v = Tensor(pixels, 1);
  m.renderer.theta_x0 = weight(d_dim, 1);

  m.inference.w_beta = weight(s_dim, 2 * s_dim + pixels);
  m.inference.b_beta = Tensor(s_dim, 1);
  m.inference.w_s = weight(s_dim, 2 * s_dim + pixels);
  m.inference.b_s = Tensor(s_dim, 1);
  m.inference.w_mu = weight(2, s_dim);
  m.inference.b_mu = Tensor(2, 1);
  m.inference.w_sigma = weight(2, s_dim);
  m.inference.b_sigma = Tensor(2, 1);
  for (int n : object_counts) m.inference.s0[n] = weight(s_dim, n);

  m.lgssm.delta = Tensor::scalar(0.1);
  m.lgssm.u = Tensor(4, 1);
  m.lgssm.sh_chol = pack_chol(0.001 * Eigen::MatrixXd::Identity(4, 4));
  m.lgssm.sa_chol = pack_chol(Eigen::MatrixXd::Identity(2, 2));
  m.lgssm.pi_logits = Tensor(k_mixture, 1);
  m.lgssm.mu = Tensor(4, k_mixture);
  for (int k = 0; k < k_mixture; ++k) {
    m.lgssm.mu(0, k) = rng.normal();
    m.lgssm.mu(1, k) = rng.normal();
  }
  m.lgssm.sk_chol = Tensor(10, k_mixture);  // zeros == identity covariance
  return m;
}

// ---- bound assembly ---------------------------------------------------------

struct ElboNodes {
  Var elbo;   // scalar, summed over the batch
  Var recon;  // scalar reconstruction log-likelihood, summed over batch
  Var log_q;  // scalar
  Var log_p;  // scalar
};

// frames: T tensors of shape (P, batch); noise: [sample][t][n] tensors of
// shape (2, batch). The posterior recurrence is built once and shared by all
// Monte-Carlo samples.
inline ElboNodes elbo_graph(Graph& g, const LgssmGraph& lg, const RendererGraph& rg,
                            const InferenceGraph& ig, const std::vector<Tensor>& frames,
                            const std::vector<std::vector<std::vector<Tensor>>>& noise,
                            double beta) {
  const int T = static_cast<int>(frames.size());
  const int N = ig.N;
  const int M = static_cast<int>(noise.size());

  std::vector<Var> frame_nodes;
  frame_nodes.reserve(frames.size());
  for (const Tensor& f : frames) frame_nodes.push_back(g.constant(f));

  PosteriorNodes post = infer_graph(g, ig, frame_nodes);

  Var elbo{}, recon_acc{}, logq_acc{}, logp_acc{};
  for (int m = 0; m < M; ++m) {
    std::vector<std::vector<Var>> a(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n)
        a[static_cast<size_t>(t)].push_back(gaussian_sample(
            post.mu[static_cast<size_t>(t)][static_cast<size_t>(n)],
            post.sigma[static_cast<size_t>(t)][static_cast<size_t>(n)],
            g.constant(noise[static_cast<size_t>(m)][static_cast<size_t>(t)][static_cast<size_t>(n)])));

    Var recon{};
    for (int t = 0; t < T; ++t) {
      const int batch = frames[static_cast<size_t>(t)].cols();
      Var probs = render_graph(g, rg, a[static_cast<size_t>(t)], batch);
      Var ll = image_loglik_graph(g, probs, frame_nodes[static_cast<size_t>(t)]);
      recon = (t == 0) ? ll : recon + ll;
    }
    Var logq = log_q_graph(g, post, a);

    std::vector<std::vector<Var>> per_object(static_cast<size_t>(N));
    for (int n = 0; n < N; ++n) {
      per_object[static_cast<size_t>(n)].reserve(static_cast<size_t>(T));
      for (int t = 0; t < T; ++t)
        per_object[static_cast<size_t>(n)].push_back(a[static_cast<size_t>(t)][static_cast<size_t>(n)]);
    }
    Var logp = sum(log_marginal_graph(g, lg, per_object));

    Var sample_elbo = recon - beta * (logq - logp);
    elbo = (m == 0) ? sample_elbo : elbo + sample_elbo;
    recon_acc = (m == 0) ? recon : recon_acc + recon;
    logq_acc = (m == 0) ? logq : logq_acc + logq;
    logp_acc = (m == 0) ? logp : logp_acc + logp;
  }
  double inv_m = 1.0 / M;
  return {elbo * inv_m, recon_acc * inv_m, logq_acc * inv_m, logp_acc * inv_m};
}

struct ElboView {
  double elbo, recon, log_q, log_p;
};

// Single-sequence bound value (spec-level elbo operation).
inline ElboView elbo_value(const Model& model, const std::vector<Tensor>& frames, int N,
                           const std::vector<std::vector<std::vector<Tensor>>>& noise, double beta) {
  if (beta <= 0) throw ConfigError("elbo: beta must be positive");
  Graph g;
  LgssmGraph lg = bind_lgssm(g, model.lgssm);
  RendererGraph rg = bind_renderer(g, model.renderer);
  InferenceGraph ig = bind_inference(g, model.inference, N);
  ElboNodes nodes = elbo_graph(g, lg, rg, ig, frames, noise, beta);
  return {nodes.elbo.val().v[0], nodes.recon.val().v[0], nodes.log_q.val().v[0],
          nodes.log_p.val().v[0]};
}

// ---- training loop ----------------------------------------------------------

struct TrainHooks {
  std::function<void(int64_t iter, double elbo, double recon_nll, double kl, double beta)> on_log;
  std::function<void(const ModelCheckpoint&, bool is_final)> on_checkpoint;
};

inline ModelCheckpoint train(const TrainConfig& cfg, const Corpus& corpus, Model model,
                             const TrainHooks& hooks = {}) {
  cfg.validate();
  if (corpus.seqs.empty()) throw ConfigError("train: empty dataset");

  // bucket sequence indices by object count so every mini-batch unrolls a
  // uniform N
  std::map<int, std::vector<size_t>> buckets;
  for (size_t i = 0; i < corpus.seqs.size(); ++i) buckets[corpus.seqs[i].n_objects].push_back(i);
  for (const auto& [n, idx] : buckets)
    if (!model.inference.s0.count(n))
      throw ConfigError("train: model does not support object count " + std::to_string(n));

  std::vector<ParamEntry> params = collect_params(model);
  std::vector<const Tensor*> param_ptrs;
  for (const auto& e : params) param_ptrs.push_back(e.tensor);
  AdamState adam;
  adam.cfg.lr = cfg.lr;
  adam.init(param_ptrs);

  Rng batch_rng = Rng::derive(cfg.seed, 0xBA7C);
  Rng noise_rng = Rng::derive(cfg.seed, 0x0153);

  ModelCheckpoint ckpt;
  ckpt.loss_history.reserve(static_cast<size_t>(cfg.iterations));

  const size_t total = corpus.seqs.size();
  for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
    // choose a bucket weighted by size, then draw the batch from it
    size_t pick = static_cast<size_t>(batch_rng.uniform_int(static_cast<int>(total)));
    int bucket_n = 0;
    size_t acc = 0;
    for (const auto& [n, idx] : buckets) {
      acc += idx.size();
      if (pick < acc) {
        bucket_n = n;
        break;
      }
    }
    const auto& bucket = buckets[bucket_n];
    std::vector<size_t> chosen(static_cast<size_t>(cfg.batch));
    for (auto& c : chosen) c = bucket[static_cast<size_t>(batch_rng.uniform_int(static_cast<int>(bucket.size())))];

    std::vector<Tensor> frames = batch_frames(corpus, chosen);
    std::vector<std::vector<std::vector<Tensor>>> noise(static_cast<size_t>(cfg.mc_samples));
    for (auto& per_t : noise) {
      per_t.resize(static_cast<size_t>(corpus.T));
      for (auto& per_n : per_t) {
        for (int n = 0; n < bucket_n; ++n)
          per_n.push_back(noise_rng.normal_tensor(2, cfg.batch));
      }
    }

    const double beta = anneal(iter, cfg);
    Graph g;
    LgssmGraph lg = bind_lgssm(g, model.lgssm);
    RendererGraph rg = bind_renderer(g, model.renderer);
    InferenceGraph ig = bind_inference(g, model.inference, bucket_n);
    ElboNodes nodes = elbo_graph(g, lg, rg, ig, frames, noise, beta);
    Var loss = nodes.elbo * (-1.0 / cfg.batch);
    if (!std::isfinite(loss.val().v[0]))
      throw NumericError("train: non-finite loss at iteration " + std::to_string(iter));
    backward(loss);

    // gradient readback in registry order; parameters not bound in this
    // graph (initial states for other object counts) get zero gradients
    std::vector<Var> bound{lg.delta,    lg.u,         lg.sh_chol, lg.sa_chol, lg.pi_logits,
                           lg.mu,       lg.sk_chol,   rg.w_alpha, rg.b_alpha, rg.w_x,
                           rg.b_x,      rg.w_v,       rg.b_v,     rg.theta_x0, ig.w_beta,
                           ig.b_beta,   ig.w_s,       ig.b_s,     ig.w_mu,    ig.b_mu,
                           ig.w_sigma,  ig.b_sigma};
    std::vector<Tensor> grads(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      grads[i] = Tensor(params[i].tensor->rows(), params[i].tensor->cols());
      Var v{};
      if (i < bound.size()) {
        v = bound[i];
      } else {
        // s0 blocks, ordered by object count in both the registry and the map
        const std::string name = "inference/s0/" + std::to_string(bucket_n);
        if (params[i].name == name) v = ig.s0;
      }
      if (v.valid() && g.has_grad(v)) grads[i] = g.grad(v);
      if (params[i].is_lgssm && iter < cfg.freeze_iters) grads[i].fill(0.0);
      if (!grads[i].all_finite())
        throw NumericError("train: non-finite gradient in " + params[i].name + " at iteration " +
                           std::to_string(iter));
    }

    std::vector<Tensor*> grad_ptrs;
    for (auto& t : grads) grad_ptrs.push_back(&t);
    clip_global_norm(grad_ptrs, cfg.grad_clip);

    std::vector<Tensor*> value_ptrs;
    std::vector<const Tensor*> grad_cptr;
    for (size_t i = 0; i < params.size(); ++i) {
      value_ptrs.push_back(params[i].tensor);
      grad_cptr.push_back(&grads[i]);
    }
    adam_step(value_ptrs, grad_cptr, adam);

    double elbo_m = nodes.elbo.val().v[0] / cfg.batch;
    double recon_nll = -nodes.recon.val().v[0] / cfg.batch;
    double kl = (nodes.log_q.val().v[0] - nodes.log_p.val().v[0]) / cfg.batch;
    ckpt.loss_history.push_back(elbo_m);
    if (hooks.on_log) hooks.on_log(iter, elbo_m, recon_nll, kl, beta);

    if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 && (iter + 1) % cfg.checkpoint_interval == 0 &&
        iter + 1 < cfg.iterations) {
      ModelCheckpoint snap{model, iter + 1, ckpt.loss_history};
      hooks.on_checkpoint(snap, false);
    }
  }

  ckpt.model = std::move(model);
  ckpt.iteration = cfg.iterations;
  if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt, true);
  return ckpt;
}

}  // namespace pixeldyn
