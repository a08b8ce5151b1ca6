#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "pixeldyn/dataset.hpp"
#include "pixeldyn/model.hpp"

namespace pixeldyn {

// ---- Procrustes alignment ---------------------------------------------------

// Latent positions are identifiable only up to rotation, scale and
// translation, so every comparison against ground truth goes through a
// least-squares similarity fit (reflections excluded).
struct SimilarityTransform {
  Mat2 rot = Mat2::Identity();
  double scale = 1.0;
  Vec2 shift = Vec2::Zero();

  Vec2 apply(const Vec2& p) const { return scale * rot * p + shift; }
};

struct AlignmentResult {
  SimilarityTransform transform;
  double rms = 0.0;
  std::vector<int> permutation;  // truth object j matches inferred object permutation[j]
};

namespace detail {

// Fit s R x + t ~ y over paired rows; returns transform and RMS residual.
inline std::pair<SimilarityTransform, double> procrustes(const Eigen::MatrixXd& x,
                                                         const Eigen::MatrixXd& y) {
  const int n = static_cast<int>(x.rows());
  Vec2 xm = x.colwise().mean().transpose();
  Vec2 ym = y.colwise().mean().transpose();
  Eigen::MatrixXd xc = x.rowwise() - xm.transpose();
  Eigen::MatrixXd yc = y.rowwise() - ym.transpose();
  double var_x = xc.squaredNorm();
  if (var_x < 1e-18) throw NumericError("align: degenerate source points");

  Mat2 cov = yc.transpose() * xc;
  Eigen::JacobiSVD<Mat2> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat2 d = Mat2::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(1, 1) = -1.0;
  SimilarityTransform tf;
  tf.rot = svd.matrixU() * d * svd.matrixV().transpose();
  tf.scale = (svd.singularValues().asDiagonal() * d).trace() / var_x;
  if (tf.scale <= 0.0) throw NumericError("align: non-positive scale");
  tf.shift = ym - tf.scale * tf.rot * xm;

  double err = 0.0;
  for (int i = 0; i < n; ++i)
    err += (tf.apply(x.row(i).transpose()) - y.row(i).transpose()).squaredNorm();
  return {tf, std::sqrt(err / n)};
}

}  // namespace detail

// inferred/truth: one (T x 2) matrix per object. Searches object
// permutations exhaustively (intended for N <= 3) and returns the
// similarity transform and permutation minimizing the aligned RMS.
inline AlignmentResult align(const std::vector<Eigen::MatrixXd>& inferred,
                             const std::vector<Eigen::MatrixXd>& truth) {
  if (inferred.size() != truth.size() || inferred.empty())
    throw ShapeError("align: object count mismatch");
  const int N = static_cast<int>(inferred.size());
  const int T = static_cast<int>(inferred[0].rows());

  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  AlignmentResult best;
  best.rms = -1.0;
  do {
    Eigen::MatrixXd x(N * T, 2), y(N * T, 2);
    for (int j = 0; j < N; ++j) {
      x.block(j * T, 0, T, 2) = inferred[static_cast<size_t>(perm[j])];
      y.block(j * T, 0, T, 2) = truth[static_cast<size_t>(j)];
    }
    auto [tf, rms] = detail::procrustes(x, y);
    if (best.rms < 0.0 || rms < best.rms) {
      best.transform = tf;
      best.rms = rms;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// ---- image emission ----------------------------------------------------------

inline void write_pgm(const std::string& path, int h, int w, std::span<const uint8_t> gray) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open for write: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

// Time overlay: pixel value is max over t of (t+1)/T for frames where the
// pixel is set, so later frames render lighter.
inline std::vector<uint8_t> overlay_frames(const std::vector<std::vector<uint8_t>>& frames) {
  if (frames.empty()) throw ShapeError("overlay: no frames");
  const double T = static_cast<double>(frames.size());
  std::vector<uint8_t> out(frames[0].size(), 0);
  for (size_t t = 0; t < frames.size(); ++t) {
    uint8_t shade = static_cast<uint8_t>(std::lround(255.0 * (static_cast<double>(t) + 1.0) / T));
    for (size_t i = 0; i < out.size(); ++i)
      if (frames[t][i]) out[i] = std::max(out[i], shade);
  }
  return out;
}

inline std::vector<uint8_t> side_by_side(std::span<const uint8_t> left,
                                         std::span<const uint8_t> right, int h, int w) {
  std::vector<uint8_t> out(static_cast<size_t>(h) * (2 * w + 1), 128);
  for (int i = 0; i < h; ++i) {
    std::copy_n(left.begin() + static_cast<int64_t>(i) * w, w, out.begin() + static_cast<int64_t>(i) * (2 * w + 1));
    std::copy_n(right.begin() + static_cast<int64_t>(i) * w, w,
                out.begin() + static_cast<int64_t>(i) * (2 * w + 1) + w + 1);
  }
  return out;
}

inline void emit_overlay(const std::vector<std::vector<uint8_t>>& frames, int h, int w,
                         const std::string& path) {
  write_pgm(path, h, w, overlay_frames(frames));
}

// Minimal SVG polyline plot in pixel coordinates, for trajectory figures.
struct SvgCurve {
  std::string color;
  Eigen::MatrixXd points;  // T x 2
};

inline void write_svg_trajectories(const std::string& path, int w, int h,
                                   const std::vector<SvgCurve>& curves, double px_scale = 8.0) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot open for write: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w * px_scale << "\" height=\""
    << h * px_scale << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  for (const auto& c : curves) {
    f << "<polyline fill=\"none\" stroke=\"" << c.color << "\" stroke-width=\"0.3\" points=\"";
    for (int t = 0; t < c.points.rows(); ++t) f << c.points(t, 0) << "," << c.points(t, 1) << " ";
    f << "\"/>\n";
    if (c.points.rows() > 0)
      f << "<circle cx=\"" << c.points(0, 0) << "\" cy=\"" << c.points(0, 1)
        << "\" r=\"0.6\" fill=\"" << c.color << "\"/>\n";
  }
  f << "</svg>\n";
}

// ---- shared task plumbing -----------------------------------------------------

inline std::vector<Tensor> sequence_frames(const Corpus& corpus, size_t seq, int t0, int t1) {
  const int P = corpus.H * corpus.W;
  std::vector<Tensor> out;
  for (int t = t0; t < t1; ++t) {
    Tensor f(P, 1);
    auto fr = corpus.frame(seq, t);
    for (int i = 0; i < P; ++i) f.v[static_cast<size_t>(i)] = fr[static_cast<size_t>(i)];
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<Eigen::MatrixXd> truth_trajectories(const Corpus& corpus, size_t seq, int t0,
                                                       int t1) {
  const int N = corpus.seqs[seq].n_objects;
  std::vector<Eigen::MatrixXd> out(static_cast<size_t>(N), Eigen::MatrixXd(t1 - t0, 2));
  for (int n = 0; n < N; ++n)
    for (int t = t0; t < t1; ++t)
      out[static_cast<size_t>(n)].row(t - t0) = corpus.pixel_truth(seq, t, n).transpose();
  return out;
}

// Inference-network position means for one sequence, as (T x 2) per object.
inline std::vector<Eigen::MatrixXd> inferred_means(const Model& model, const Corpus& corpus,
                                                   size_t seq) {
  const int N = corpus.seqs[seq].n_objects;
  auto frames = sequence_frames(corpus, seq, 0, corpus.T);
  PosteriorOutput post = infer(model.inference, frames, N);
  std::vector<Eigen::MatrixXd> out(static_cast<size_t>(N), Eigen::MatrixXd(corpus.T, 2));
  for (int t = 0; t < corpus.T; ++t)
    for (int n = 0; n < N; ++n) {
      out[static_cast<size_t>(n)](t, 0) = post.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].v[0];
      out[static_cast<size_t>(n)](t, 1) = post.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].v[1];
    }
  return out;
}

// ---- position inference (Fig. 4 protocol) -------------------------------------

struct PositionInferenceRecord {
  size_t sequence = 0;
  int n_objects = 0;
  double aligned_rms = 0.0;  // pixel units
};

// Evenly strided sequence indices covering the corpus (test splits are
// grouped by object count, so a prefix would not be representative).
inline std::vector<size_t> strided_indices(size_t total, size_t want) {
  std::vector<size_t> idx;
  if (total == 0) return idx;
  size_t count = std::min(total, want);
  for (size_t i = 0; i < count; ++i) idx.push_back(i * total / count);
  return idx;
}

inline std::vector<PositionInferenceRecord> position_inference_task(
    const Model& model, const Corpus& corpus, const std::vector<size_t>& indices,
    const std::string& plot_dir = "", size_t plots = 0) {
  std::vector<PositionInferenceRecord> out;
  for (size_t i : indices) {
    auto inferred = inferred_means(model, corpus, i);
    auto truth = truth_trajectories(corpus, i, 0, corpus.T);
    AlignmentResult ar = align(inferred, truth);
    out.push_back({i, corpus.seqs[i].n_objects, ar.rms});

    if (!plot_dir.empty() && out.size() <= plots) {
      std::vector<SvgCurve> curves;
      for (const auto& tr : truth) curves.push_back({"black", tr});
      for (size_t n = 0; n < inferred.size(); ++n) {
        Eigen::MatrixXd mapped(corpus.T, 2);
        for (int t = 0; t < corpus.T; ++t)
          mapped.row(t) = ar.transform.apply(inferred[n].row(t).transpose()).transpose();
        curves.push_back({"blue", mapped});
      }
      write_svg_trajectories(plot_dir + "/infer_" + std::to_string(i) + ".svg", corpus.W, corpus.H,
                             curves);
    }
  }
  return out;
}

inline std::vector<PositionInferenceRecord> position_inference_task(
    const Model& model, const Corpus& corpus, size_t max_sequences,
    const std::string& plot_dir = "", size_t plots = 0) {
  std::vector<size_t> idx(std::min(max_sequences, corpus.seqs.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return position_inference_task(model, corpus, idx, plot_dir, plots);
}

// ---- multi-step generation (Fig. 6-8 protocol) ---------------------------------

struct GenerationResult {
  std::vector<Eigen::MatrixXd> observed_means;     // per object, obs x 2 (model space)
  std::vector<Eigen::MatrixXd> generated;          // per object, horizon x 2 (model space)
  std::vector<int> components;                     // argmax mixture component per object
  std::vector<Tensor> probs;                       // horizon rendered frames
  double mean_nll = 0.0;                           // per-pixel Bernoulli NLL vs truth
};

inline GenerationResult generation_task(const Model& model, const Corpus& corpus, size_t seq,
                                        int horizon = 25, int observed = 5) {
  if (horizon < 1) throw ConfigError("generation: horizon must be >= 1");
  if (observed + horizon > corpus.T) throw ConfigError("generation: horizon exceeds ground truth");
  const int N = corpus.seqs[seq].n_objects;
  const int P = corpus.H * corpus.W;
  LgssmParams lparams = model.lgssm.realize();

  auto frames = sequence_frames(corpus, seq, 0, observed);
  PosteriorOutput post = infer(model.inference, frames, N);

  GenerationResult res;
  for (int n = 0; n < N; ++n) {
    Eigen::MatrixXd obs(observed, 2);
    for (int t = 0; t < observed; ++t) {
      obs(t, 0) = post.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].v[0];
      obs(t, 1) = post.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].v[1];
    }
    Eigen::VectorXd zpost = mixture_posterior(lparams, obs, full_mask(observed));
    int kbest = 0;
    zpost.maxCoeff(&kbest);
    FilterResult fr = kalman_filter(lparams, obs, full_mask(observed), kbest);
    res.observed_means.push_back(obs);
    res.components.push_back(kbest);
    res.generated.push_back(forward_generate(lparams, fr.filtered[static_cast<size_t>(observed - 1)], horizon));
  }

  double nll = 0.0;
  for (int step = 0; step < horizon; ++step) {
    Eigen::MatrixXd pos(N, 2);
    for (int n = 0; n < N; ++n) pos.row(n) = res.generated[static_cast<size_t>(n)].row(step);
    Tensor probs = render(model.renderer, pos);
    auto truth = corpus.frame(seq, observed + step);
    nll += -log_likelihood_image(probs, truth) / P;
    res.probs.push_back(std::move(probs));
  }
  res.mean_nll = nll / horizon;
  return res;
}

// ---- past-and-future interpolation (Fig. 9 protocol) ---------------------------

struct InterpolationResult {
  std::vector<Eigen::MatrixXd> generated;      // per object, T x 2 (observed means + generated middle)
  std::vector<Eigen::MatrixXd> interpolated;   // per object, T x 2 smoothed means
  std::vector<int> components;
  std::vector<Tensor> probs;                   // rendered interpolated middle frames
};

// Observes v_{1:obs} and v_{T-obs+1:T}; the middle is forward-generated,
// used to warm in the inference state, and finally replaced by RTS-smoothed
// positions treating the middle as missing.
inline InterpolationResult interpolation_task(const Model& model, const Corpus& corpus, size_t seq,
                                              int observed = 5) {
  const int T = corpus.T;
  const int N = corpus.seqs[seq].n_objects;
  const int middle = T - 2 * observed;
  if (middle < 1) throw ConfigError("interpolation: no middle steps");
  LgssmParams lparams = model.lgssm.realize();

  // head window: means, per-object component and filtered belief
  auto head_frames = sequence_frames(corpus, seq, 0, observed);
  Graph g;
  InferenceGraph ig = bind_inference(g, model.inference, N);
  std::vector<Var> head_nodes;
  for (const Tensor& f : head_frames) head_nodes.push_back(g.constant(f));
  PosteriorNodes head = infer_graph(g, ig, head_nodes);

  InterpolationResult res;
  std::vector<GaussianBelief> beliefs;
  std::vector<Eigen::MatrixXd> head_means(static_cast<size_t>(N), Eigen::MatrixXd(observed, 2));
  for (int n = 0; n < N; ++n) {
    for (int t = 0; t < observed; ++t) {
      head_means[static_cast<size_t>(n)](t, 0) = head.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].val().v[0];
      head_means[static_cast<size_t>(n)](t, 1) = head.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].val().v[1];
    }
    Eigen::VectorXd zpost = mixture_posterior(lparams, head_means[static_cast<size_t>(n)], full_mask(observed));
    int kbest = 0;
    zpost.maxCoeff(&kbest);
    res.components.push_back(kbest);
    FilterResult fr = kalman_filter(lparams, head_means[static_cast<size_t>(n)], full_mask(observed), kbest);
    beliefs.push_back(fr.filtered[static_cast<size_t>(observed - 1)]);
  }

  // forward-generate the middle and render it
  std::vector<Eigen::MatrixXd> middle_gen;
  for (int n = 0; n < N; ++n)
    middle_gen.push_back(forward_generate(lparams, beliefs[static_cast<size_t>(n)], middle));
  std::vector<Var> generated_nodes;
  for (int step = 0; step < middle; ++step) {
    RendererGraph rg = bind_renderer(g, model.renderer);
    std::vector<Var> pos;
    for (int n = 0; n < N; ++n) {
      Tensor t(2, 1);
      t.v = {middle_gen[static_cast<size_t>(n)](step, 0), middle_gen[static_cast<size_t>(n)](step, 1)};
      pos.push_back(g.constant(std::move(t)));
    }
    generated_nodes.push_back(render_graph(g, rg, pos, 1));
  }

  // warm the inference state through the generated middle, starting from the
  // state after the head window
  std::vector<Var> warm_init;
  for (int n = 0; n < N; ++n)
    warm_init.push_back(head.s[static_cast<size_t>(observed - 1)][static_cast<size_t>(n)]);
  PosteriorNodes warm = infer_graph(g, ig, generated_nodes, &warm_init);

  // tail window with the warmed-in state as override
  auto tail_frames = sequence_frames(corpus, seq, T - observed, T);
  std::vector<Var> tail_nodes;
  for (const Tensor& f : tail_frames) tail_nodes.push_back(g.constant(f));
  std::vector<Var> tail_init;
  for (int n = 0; n < N; ++n)
    tail_init.push_back(warm.s[static_cast<size_t>(middle - 1)][static_cast<size_t>(n)]);
  PosteriorNodes tail = infer_graph(g, ig, tail_nodes, &tail_init);

  // smooth per object with the middle treated as missing
  std::vector<uint8_t> mask(static_cast<size_t>(T), 0);
  for (int t = 0; t < observed; ++t) {
    mask[static_cast<size_t>(t)] = 1;
    mask[static_cast<size_t>(T - 1 - t)] = 1;
  }
  for (int n = 0; n < N; ++n) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(T, 2);
    Eigen::MatrixXd full_gen(T, 2);
    for (int t = 0; t < observed; ++t) {
      a.row(t) = head_means[static_cast<size_t>(n)].row(t);
      full_gen.row(t) = head_means[static_cast<size_t>(n)].row(t);
      a(T - observed + t, 0) = tail.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].val().v[0];
      a(T - observed + t, 1) = tail.mu[static_cast<size_t>(t)][static_cast<size_t>(n)].val().v[1];
      full_gen.row(T - observed + t) = a.row(T - observed + t);
    }
    for (int step = 0; step < middle; ++step)
      full_gen.row(observed + step) = middle_gen[static_cast<size_t>(n)].row(step);
    res.generated.push_back(full_gen);
    res.interpolated.push_back(
        interpolate_missing(lparams, a, mask, res.components[static_cast<size_t>(n)]));
  }

  // render the interpolated middle
  for (int step = 0; step < middle; ++step) {
    Eigen::MatrixXd pos(N, 2);
    for (int n = 0; n < N; ++n) pos.row(n) = res.interpolated[static_cast<size_t>(n)].row(observed + step);
    res.probs.push_back(render(model.renderer, pos));
  }
  return res;
}

// Paired scoring for interpolation vs generation: one similarity transform is
// fitted on the observed windows and applied to both candidate middles.
struct InterpolationScore {
  double gen_err = 0.0;     // mean pixel error of generated middle steps
  double interp_err = 0.0;  // mean pixel error of interpolated middle steps
};

inline InterpolationScore score_interpolation(const Corpus& corpus, size_t seq,
                                              const InterpolationResult& res, int observed = 5) {
  const int T = corpus.T;
  const int N = corpus.seqs[seq].n_objects;
  const int middle = T - 2 * observed;

  // observed-window points drive the fit
  std::vector<Eigen::MatrixXd> window_inferred(static_cast<size_t>(N), Eigen::MatrixXd(2 * observed, 2));
  std::vector<Eigen::MatrixXd> window_truth(static_cast<size_t>(N), Eigen::MatrixXd(2 * observed, 2));
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < observed; ++t) {
      window_inferred[static_cast<size_t>(n)].row(t) = res.generated[static_cast<size_t>(n)].row(t);
      window_inferred[static_cast<size_t>(n)].row(observed + t) =
          res.generated[static_cast<size_t>(n)].row(T - observed + t);
      window_truth[static_cast<size_t>(n)].row(t) = corpus.pixel_truth(seq, t, n).transpose();
      window_truth[static_cast<size_t>(n)].row(observed + t) =
          corpus.pixel_truth(seq, T - observed + t, n).transpose();
    }
  AlignmentResult ar = align(window_inferred, window_truth);

  InterpolationScore score;
  for (int j = 0; j < N; ++j) {
    int src = ar.permutation[static_cast<size_t>(j)];
    for (int step = 0; step < middle; ++step) {
      int t = observed + step;
      Vec2 truth = corpus.pixel_truth(seq, t, j);
      Vec2 gen = ar.transform.apply(res.generated[static_cast<size_t>(src)].row(t).transpose());
      Vec2 interp = ar.transform.apply(res.interpolated[static_cast<size_t>(src)].row(t).transpose());
      score.gen_err += (gen - truth).norm();
      score.interp_err += (interp - truth).norm();
    }
  }
  score.gen_err /= N * middle;
  score.interp_err /= N * middle;
  return score;
}

// One-sided sign test: probability of >= wins successes among n fair coin
// flips; used for the paired interpolation-vs-generation comparison.
inline double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    p += std::exp(logc - n * std::log(2.0));
  }
  return std::min(p, 1.0);
}

inline std::vector<uint8_t> binarize(const Tensor& probs) {
  std::vector<uint8_t> out(probs.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = probs.v[i] >= 0.5 ? 1 : 0;
  return out;
}

}  // namespace pixeldyn
