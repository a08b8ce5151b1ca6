#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pixeldyn/adam.hpp"
#include "pixeldyn/checkpoint.hpp"
#include "pixeldyn/dataset.hpp"
#include "pixeldyn/renderer.hpp"

namespace pixeldyn {

// Encoder-decoder LSTM baseline for multi-step generation: fully connected
// ReLU encoder, one LSTM cell, fully connected sigmoid decoder. Trained
// teacher-forced on next-frame prediction; generation feeds the decoded
// probabilities back in closed loop.

struct EdLstmParams {
  Tensor enc_w;   // E x P
  Tensor enc_b;   // E x 1
  Tensor lstm_w;  // 4H x (E + H), gate order i, f, o, g
  Tensor lstm_b;  // 4H x 1
  Tensor dec_w;   // P x H
  Tensor dec_b;   // P x 1
  int image_h = 0;
  int image_w = 0;

  int enc_dim() const { return enc_w.rows(); }
  int hidden() const { return lstm_b.rows() / 4; }
  int P() const { return dec_w.rows(); }
};

inline std::vector<ParamEntry> collect_edlstm_params(EdLstmParams& p) {
  return {{"edlstm/enc_w", &p.enc_w, false},   {"edlstm/enc_b", &p.enc_b, false},
          {"edlstm/lstm_w", &p.lstm_w, false}, {"edlstm/lstm_b", &p.lstm_b, false},
          {"edlstm/dec_w", &p.dec_w, false},   {"edlstm/dec_b", &p.dec_b, false}};
}

struct EdLstmConfig {
  int enc_dim = 1024;
  int hidden = 2048;
  int64_t iterations = 200000;
  int batch = 20;
  double lr = 0.001;
  uint64_t seed = 1;
  double grad_clip = 100.0;
  int64_t checkpoint_interval = 5000;
};

// Same initialization policy as the main model: weights N(0, 1/sqrt(d)) with
// d the element count, biases zero.
inline EdLstmParams initialize_edlstm(uint64_t seed, int pixels, int enc_dim, int hidden,
                                      int image_h, int image_w) {
  Rng rng(seed);
  auto weight = [&](int r, int c) {
    Tensor t(r, c);
    double sd = 1.0 / std::sqrt(static_cast<double>(t.numel()));
    for (auto& v : t.v) v = sd * rng.normal();
    return t;
  };
  EdLstmParams p;
  p.enc_w = weight(enc_dim, pixels);
  p.enc_b = Tensor(enc_dim, 1);
  p.lstm_w = weight(4 * hidden, enc_dim + hidden);
  p.lstm_b = Tensor(4 * hidden, 1);
  p.dec_w = weight(pixels, hidden);
  p.dec_b = Tensor(pixels, 1);
  p.image_h = image_h;
  p.image_w = image_w;
  return p;
}

struct EdLstmGraph {
  Var enc_w, enc_b, lstm_w, lstm_b, dec_w, dec_b;
};

inline EdLstmGraph bind_edlstm(Graph& g, const EdLstmParams& p) {
  return {g.param(p.enc_w),  g.param(p.enc_b), g.param(p.lstm_w),
          g.param(p.lstm_b), g.param(p.dec_w), g.param(p.dec_b)};
}

inline Var relu(Var x) { return clamp(x, 0.0, std::numeric_limits<double>::infinity()); }

struct EdLstmStateNodes {
  Var h, c;  // hidden/cell, (H, batch)
};

// One cell update on an encoded input; returns the new state and the decoded
// next-frame probabilities.
inline std::pair<EdLstmStateNodes, Var> edlstm_step_graph(Graph& g, const EdLstmGraph& eg,
                                                          const EdLstmStateNodes& state, Var input) {
  const int H = state.h.val().rows();
  Var e = relu(matmul(eg.enc_w, input) + eg.enc_b);
  Var z = matmul(eg.lstm_w, concat_rows(e, state.h)) + eg.lstm_b;
  Var gi = sigmoid(rows(z, 0, H));
  Var gf = sigmoid(rows(z, H, 2 * H));
  Var go = sigmoid(rows(z, 2 * H, 3 * H));
  Var gg = tanh(rows(z, 3 * H, 4 * H));
  EdLstmStateNodes next;
  next.c = gf * state.c + gi * gg;
  next.h = go * tanh(next.c);
  Var probs = sigmoid(matmul(eg.dec_w, next.h) + eg.dec_b);
  return {next, probs};
}

struct EdLstmState {
  Tensor h, c;
};

// Value-level single step (spec-level operation).
inline std::pair<EdLstmState, Tensor> edlstm_step(const EdLstmParams& p, const EdLstmState& state,
                                                  const Tensor& input) {
  Graph g;
  EdLstmGraph eg = bind_edlstm(g, p);
  EdLstmStateNodes sn{g.constant(state.h), g.constant(state.c)};
  auto [next, probs] = edlstm_step_graph(g, eg, sn, g.constant(input));
  return {{next.h.val(), next.c.val()}, probs.val()};
}

// Teacher-forced for `observed` steps (inputs: zero frame, then the observed
// frames), then closed loop feeding back decoded probabilities. Returns the
// predicted probabilities for the `horizon` steps after the observed window.
inline std::vector<Tensor> edlstm_generate(const EdLstmParams& p,
                                           const std::vector<Tensor>& observed_frames,
                                           int horizon) {
  if (horizon < 1) throw ConfigError("edlstm: horizon must be >= 1");
  const int H = p.hidden();
  Graph g;
  EdLstmGraph eg = bind_edlstm(g, p);
  EdLstmStateNodes state{g.constant(Tensor(H, 1)), g.constant(Tensor(H, 1))};
  Var probs{};
  Var input = g.constant(Tensor(p.P(), 1));  // zero frame before the first image
  for (size_t t = 0; t < observed_frames.size(); ++t) {
    std::tie(state, probs) = edlstm_step_graph(g, eg, state, input);
    input = g.constant(observed_frames[t]);
  }
  std::vector<Tensor> out;
  for (int step = 0; step < horizon; ++step) {
    std::tie(state, probs) = edlstm_step_graph(g, eg, state, input);
    input = probs;  // closed loop on probabilities, not samples
    out.push_back(probs.val());
  }
  return out;
}

struct EdLstmHooks {
  std::function<void(int64_t iter, double nll)> on_log;
  std::function<void(const EdLstmParams&, int64_t iter, bool is_final)> on_checkpoint;
};

// Teacher-forced Bernoulli NLL over t = 2..T (every prediction conditioned on
// the previous ground-truth frame), Adam with the shared optimizer settings.
inline EdLstmParams train_edlstm(const EdLstmConfig& cfg, const Corpus& corpus, EdLstmParams params,
                                 const EdLstmHooks& hooks = {}) {
  if (corpus.seqs.empty()) throw ConfigError("edlstm: empty dataset");
  const int T = corpus.T;
  const int P = corpus.H * corpus.W;

  std::vector<ParamEntry> entries = collect_edlstm_params(params);
  std::vector<const Tensor*> ptrs;
  for (auto& e : entries) ptrs.push_back(e.tensor);
  AdamState adam;
  adam.cfg.lr = cfg.lr;
  adam.init(ptrs);

  Rng batch_rng = Rng::derive(cfg.seed, 0xED15);

  for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<size_t> chosen(static_cast<size_t>(cfg.batch));
    for (auto& c : chosen)
      c = static_cast<size_t>(batch_rng.uniform_int(static_cast<int>(corpus.seqs.size())));
    std::vector<Tensor> frames = batch_frames(corpus, chosen);

    Graph g;
    EdLstmGraph eg = bind_edlstm(g, params);
    const int H = cfg.hidden;
    EdLstmStateNodes state{g.constant(Tensor(H, cfg.batch)), g.constant(Tensor(H, cfg.batch))};
    Var input = g.constant(Tensor(P, cfg.batch));
    Var probs{};
    Var loss{};
    for (int t = 0; t < T; ++t) {
      std::tie(state, probs) = edlstm_step_graph(g, eg, state, input);
      Var frame = g.constant(frames[static_cast<size_t>(t)]);
      if (t >= 1) {
        Var nll = -1.0 * image_loglik_graph(g, probs, frame);
        loss = (t == 1) ? nll : loss + nll;
      }
      input = frame;  // teacher forcing
    }
    loss = loss * (1.0 / (cfg.batch * (T - 1) * P));
    if (!std::isfinite(loss.val().v[0]))
      throw NumericError("edlstm: non-finite loss at iteration " + std::to_string(iter));
    backward(loss);

    std::vector<Var> bound{eg.enc_w, eg.enc_b, eg.lstm_w, eg.lstm_b, eg.dec_w, eg.dec_b};
    std::vector<Tensor> grads(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
      grads[i] = g.has_grad(bound[i]) ? g.grad(bound[i])
                                      : Tensor(entries[i].tensor->rows(), entries[i].tensor->cols());
      if (!grads[i].all_finite())
        throw NumericError("edlstm: non-finite gradient at iteration " + std::to_string(iter));
    }
    std::vector<Tensor*> gptr;
    for (auto& t : grads) gptr.push_back(&t);
    clip_global_norm(gptr, cfg.grad_clip);
    std::vector<Tensor*> vptr;
    std::vector<const Tensor*> gcptr;
    for (size_t i = 0; i < entries.size(); ++i) {
      vptr.push_back(entries[i].tensor);
      gcptr.push_back(&grads[i]);
    }
    adam_step(vptr, gcptr, adam);

    if (hooks.on_log) hooks.on_log(iter, loss.val().v[0]);
    if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 &&
        (iter + 1) % cfg.checkpoint_interval == 0 && iter + 1 < cfg.iterations)
      hooks.on_checkpoint(params, iter + 1, false);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(params, cfg.iterations, true);
  return params;
}

// ---- checkpoint container (shared "PDYC" format, edlstm block namespace) ----

inline void save_edlstm(const std::string& path, const EdLstmParams& params, int64_t iteration,
                        const std::vector<double>& loss_history) {
  NamedBlocks nb;
  nb.iteration = iteration;
  nb.loss_history = loss_history;
  EdLstmParams& p = const_cast<EdLstmParams&>(params);
  for (const ParamEntry& e : collect_edlstm_params(p)) nb.blocks.emplace_back(e.name, *e.tensor);
  Tensor hw(2, 1);
  hw.v = {static_cast<double>(params.image_h), static_cast<double>(params.image_w)};
  nb.blocks.emplace_back("meta/image_hw", hw);
  write_blocks(path, nb);
}

inline EdLstmParams load_edlstm(const std::string& path) {
  NamedBlocks nb = read_blocks(path);
  EdLstmParams p;
  p.enc_w = nb.get("edlstm/enc_w");
  p.enc_b = nb.get("edlstm/enc_b");
  p.lstm_w = nb.get("edlstm/lstm_w");
  p.lstm_b = nb.get("edlstm/lstm_b");
  p.dec_w = nb.get("edlstm/dec_w");
  p.dec_b = nb.get("edlstm/dec_b");
  const Tensor& hw = nb.get("meta/image_hw");
  p.image_h = static_cast<int>(hw.v[0]);
  p.image_w = static_cast<int>(hw.v[1]);
  return p;
}

// Per-pixel NLL of the ED-LSTM generation against ground truth.
inline double edlstm_generation_nll(const EdLstmParams& p, const Corpus& corpus, size_t seq,
                                    int horizon = 25, int observed = 5) {
  std::vector<Tensor> obs_frames;
  for (int t = 0; t < observed; ++t) {
    Tensor f(p.P(), 1);
    auto fr = corpus.frame(seq, t);
    for (int i = 0; i < p.P(); ++i) f.v[static_cast<size_t>(i)] = fr[static_cast<size_t>(i)];
    obs_frames.push_back(std::move(f));
  }
  std::vector<Tensor> gen = edlstm_generate(p, obs_frames, horizon);
  double nll = 0.0;
  for (int step = 0; step < horizon; ++step)
    nll += -log_likelihood_image(gen[static_cast<size_t>(step)], corpus.frame(seq, observed + step)) / p.P();
  return nll / horizon;
}

}  // namespace pixeldyn
