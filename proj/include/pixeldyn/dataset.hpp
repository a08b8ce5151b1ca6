#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pixeldyn/lgssm.hpp"
#include "pixeldyn/rng.hpp"
#include "pixeldyn/serial.hpp"

namespace pixeldyn {

// Cannonball corpus: Newtonian trajectories sampled from the ground-truth
// LGSSM, rescaled into pixel coordinates with one corpus-global affine map
// per axis, and rasterized as hard discs onto binary frames.

struct DatasetConfig {
  int T = 30;
  int H = 48;
  int W = 48;
  int R = 2;
  std::vector<int> object_counts{1, 2, 3};
  int train_per_count = 5000;
  int test_per_count = 500;
  uint64_t seed = 1;

  // physics (pre-rescale units)
  double delta = 0.015;
  double gravity = 9.81;
  double sigma_a = 0.001;  // isotropic emission noise variance
  double angle_lo_deg = 40.0, angle_hi_deg = 60.0;
  double speed_lo = 2.0, speed_hi = 3.0;
  double x_lo = -0.5, x_hi = -0.1;
  double y_lo = -0.5, y_hi = 0.5;
  double right_shift = 0.9;  // right-side launch interval offset, as a fraction of max_x

  Vec4 force() const {
    Vec4 u;
    u << 0.0, -gravity * 0.5 * delta * delta, 0.0, -gravity * delta;
    return u;
  }

  // Maximum x displacement over T steps from the left interval: the x
  // velocity is constant, so it is speed_hi * cos(angle_lo) * delta * (T-1).
  double max_x() const {
    return speed_hi * std::cos(angle_lo_deg * M_PI / 180.0) * delta * (T - 1);
  }

  void validate() const {
    if (R < 1) throw ConfigError("dataset: R must be >= 1");
    if (2 * R + 1 >= H || 2 * R + 1 >= W) throw ConfigError("dataset: disc too large for image");
    if (delta <= 0) throw ConfigError("dataset: delta must be positive");
    if (T < 3) throw ConfigError("dataset: T must be >= 3");
    if (object_counts.empty()) throw ConfigError("dataset: no object counts");
  }
};

// Per-axis affine map into pixel coordinates; the inverse is stored with the
// corpus so evaluation can move between spaces.
struct RescaleMap {
  double sx = 1.0, ox = 0.0;
  double sy = 1.0, oy = 0.0;

  Vec2 apply(const Vec2& p) const { return {sx * p(0) + ox, sy * p(1) + oy}; }
  Vec2 invert(const Vec2& p) const { return {(p(0) - ox) / sx, (p(1) - oy) / sy}; }
};

struct ImageSequence {
  int n_objects = 0;
  std::vector<uint8_t> frames;  // T * H * W, row-major, origin top-left
  std::vector<double> h;        // T * N * 4, pre-rescale
  std::vector<double> a;        // T * N * 2, pre-rescale

  double& h_at(int t, int n, int d, int N) { return h[(static_cast<size_t>(t) * N + n) * 4 + d]; }
  double h_at(int t, int n, int d, int N) const {
    return h[(static_cast<size_t>(t) * N + n) * 4 + d];
  }
  double& a_at(int t, int n, int d, int N) { return a[(static_cast<size_t>(t) * N + n) * 2 + d]; }
  double a_at(int t, int n, int d, int N) const {
    return a[(static_cast<size_t>(t) * N + n) * 2 + d];
  }
};

struct Corpus {
  int T = 0, H = 0, W = 0, R = 0;
  RescaleMap rescale;
  std::vector<ImageSequence> seqs;

  std::span<const uint8_t> frame(size_t seq, int t) const {
    return std::span(seqs[seq].frames).subspan(static_cast<size_t>(t) * H * W,
                                               static_cast<size_t>(H) * W);
  }
  std::span<uint8_t> frame(size_t seq, int t) {
    return std::span(seqs[seq].frames).subspan(static_cast<size_t>(t) * H * W,
                                               static_cast<size_t>(H) * W);
  }
  // ground-truth position of object n at step t, in pixel coordinates
  Vec2 pixel_truth(size_t seq, int t, int n) const {
    const auto& s = seqs[seq];
    Vec2 p{s.a_at(t, n, 0, s.n_objects), s.a_at(t, n, 1, s.n_objects)};
    return rescale.apply(p);
  }
};

// Gathers frames of the chosen sequences as (P, batch) column blocks for the
// training graphs.
inline std::vector<Tensor> batch_frames(const Corpus& corpus, const std::vector<size_t>& idx) {
  const int T = corpus.T;
  const int P = corpus.H * corpus.W;
  const int b = static_cast<int>(idx.size());
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    Tensor f(P, b);
    for (int j = 0; j < b; ++j) {
      auto frame = corpus.frame(idx[static_cast<size_t>(j)], t);
      for (int i = 0; i < P; ++i) f(i, j) = frame[static_cast<size_t>(i)];
    }
    out.push_back(std::move(f));
  }
  return out;
}

enum class LaunchSide { Left, Right };

// One cannonball: initial position and velocity per the shooting protocol,
// then an LGSSM rollout with sigma_h = 0 and isotropic emission noise.
inline Trajectory generate_trajectory(const DatasetConfig& cfg, Rng& rng, LaunchSide side) {
  double angle = rng.uniform(cfg.angle_lo_deg, cfg.angle_hi_deg) * M_PI / 180.0;
  double speed = rng.uniform(cfg.speed_lo, cfg.speed_hi);
  double x0 = rng.uniform(cfg.x_lo, cfg.x_hi);
  if (side == LaunchSide::Right) x0 += cfg.right_shift * cfg.max_x();
  double y0 = rng.uniform(cfg.y_lo, cfg.y_hi);
  double vx = speed * std::cos(angle);
  if (side == LaunchSide::Right) vx = -vx;
  double vy = speed * std::sin(angle);

  LgssmParams p;
  p.delta = cfg.delta;
  p.u = cfg.force();
  p.sigma_h = Mat4::Zero();
  p.sigma_a = cfg.sigma_a * Mat2::Identity();
  p.mixture.resize(1);
  p.mixture[0].weight = 1.0;
  p.mixture[0].mean << x0, y0, vx, vy;
  p.mixture[0].cov = Mat4::Zero();
  return sample_trajectory(p, cfg.T, rng, 0);
}

// White disc of radius R at a rounded center, OR-combined into the frame.
// Position must already lie inside [R, W-1-R] x [R, H-1-R].
inline void rasterize(double px, double py, int R, int H, int W, std::span<uint8_t> frame) {
  const double eps = 1e-9;
  if (px < R - eps || px > W - 1 - R + eps || py < R - eps || py > H - 1 - R + eps)
    throw NumericError("rasterize: center out of bounds");
  int cx = static_cast<int>(std::lround(px));
  int cy = static_cast<int>(std::lround(py));
  for (int di = -R; di <= R; ++di)
    for (int dj = -R; dj <= R; ++dj)
      if (di * di + dj * dj <= R * R)
        frame[static_cast<size_t>(cy + di) * W + (cx + dj)] = 1;
}

// Generates the train and test splits together so the corpus-global rescale
// map is shared: a per-split (or per-sequence) rescale would break the common
// linear dynamics the model has to learn.
inline std::pair<Corpus, Corpus> generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  struct Pending {
    int n;
    std::vector<Trajectory> objects;
    bool test;
  };
  std::vector<Pending> all;
  uint64_t index = 0;
  for (int split = 0; split < 2; ++split) {
    int per = split == 0 ? cfg.train_per_count : cfg.test_per_count;
    for (int n : cfg.object_counts)
      for (int i = 0; i < per; ++i, ++index) {
        Rng rng = Rng::derive(cfg.seed, index);
        Pending ps{n, {}, split == 1};
        for (int obj = 0; obj < n; ++obj) {
          LaunchSide side = rng.u01() < 0.5 ? LaunchSide::Left : LaunchSide::Right;
          ps.objects.push_back(generate_trajectory(cfg, rng, side));
        }
        all.push_back(std::move(ps));
      }
  }

  // corpus-global extents of the noisy positions
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const auto& ps : all)
    for (const auto& tr : ps.objects)
      for (int t = 0; t < cfg.T; ++t) {
        min_x = std::min(min_x, tr.a(t, 0));
        max_x = std::max(max_x, tr.a(t, 0));
        min_y = std::min(min_y, tr.a(t, 1));
        max_y = std::max(max_y, tr.a(t, 1));
      }
  if (!(max_x > min_x) || !(max_y > min_y))
    throw NumericError("generate_dataset: degenerate position extent");

  RescaleMap map;
  map.sx = (cfg.W - 1 - 2.0 * cfg.R) / (max_x - min_x);
  map.ox = cfg.R - map.sx * min_x;
  map.sy = (cfg.H - 1 - 2.0 * cfg.R) / (max_y - min_y);
  map.oy = cfg.R - map.sy * min_y;

  Corpus train, test;
  for (Corpus* c : {&train, &test}) {
    c->T = cfg.T;
    c->H = cfg.H;
    c->W = cfg.W;
    c->R = cfg.R;
    c->rescale = map;
  }

  for (const auto& ps : all) {
    ImageSequence seq;
    seq.n_objects = ps.n;
    seq.frames.assign(static_cast<size_t>(cfg.T) * cfg.H * cfg.W, 0);
    seq.h.resize(static_cast<size_t>(cfg.T) * ps.n * 4);
    seq.a.resize(static_cast<size_t>(cfg.T) * ps.n * 2);
    for (int t = 0; t < cfg.T; ++t) {
      auto frame = std::span(seq.frames).subspan(static_cast<size_t>(t) * cfg.H * cfg.W,
                                                 static_cast<size_t>(cfg.H) * cfg.W);
      for (int n = 0; n < ps.n; ++n) {
        const Trajectory& tr = ps.objects[static_cast<size_t>(n)];
        for (int d = 0; d < 4; ++d) seq.h_at(t, n, d, ps.n) = tr.h(t, d);
        for (int d = 0; d < 2; ++d) seq.a_at(t, n, d, ps.n) = tr.a(t, d);
        Vec2 px = map.apply(Vec2(tr.a(t, 0), tr.a(t, 1)));
        rasterize(px(0), px(1), cfg.R, cfg.H, cfg.W, frame);
      }
    }
    (ps.test ? test : train).seqs.push_back(std::move(seq));
  }
  return {std::move(train), std::move(test)};
}

// ---- container format -------------------------------------------------------
// "PDY1" | u32 version | u32 sequence count | u16 T,H,W,R | rescale (4 f64) |
// per sequence: u8 N, h (T*N*4 f64), a (T*N*2 f64), frames (T*H*W bytes) |
// u32 crc32 trailer. All little-endian, frames row-major, origin top-left.

constexpr uint32_t kDatasetVersion = 1;

inline void write_dataset(const std::string& path, const Corpus& c) {
  ByteWriter w;
  w.magic("PDY1");
  w.u32(kDatasetVersion);
  w.u32(static_cast<uint32_t>(c.seqs.size()));
  w.u16(static_cast<uint16_t>(c.T));
  w.u16(static_cast<uint16_t>(c.H));
  w.u16(static_cast<uint16_t>(c.W));
  w.u16(static_cast<uint16_t>(c.R));
  w.f64(c.rescale.sx);
  w.f64(c.rescale.ox);
  w.f64(c.rescale.sy);
  w.f64(c.rescale.oy);
  for (const auto& s : c.seqs) {
    w.u8(static_cast<uint8_t>(s.n_objects));
    for (double x : s.h) w.f64(x);
    for (double x : s.a) w.f64(x);
    w.bytes(s.frames);
  }
  w.seal();
  w.to_file(path);
}

inline Corpus read_dataset(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.check_seal("dataset");
  r.expect_magic("PDY1", "dataset");
  uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  uint32_t count = r.u32();
  Corpus c;
  c.T = r.u16();
  c.H = r.u16();
  c.W = r.u16();
  c.R = r.u16();
  c.rescale.sx = r.f64();
  c.rescale.ox = r.f64();
  c.rescale.sy = r.f64();
  c.rescale.oy = r.f64();
  c.seqs.resize(count);
  for (auto& s : c.seqs) {
    s.n_objects = r.u8();
    if (s.n_objects < 1) throw FormatError("dataset: bad object count");
    s.h.resize(static_cast<size_t>(c.T) * s.n_objects * 4);
    for (auto& x : s.h) x = r.f64();
    s.a.resize(static_cast<size_t>(c.T) * s.n_objects * 2);
    for (auto& x : s.a) x = r.f64();
    auto bytes = r.take(static_cast<size_t>(c.T) * c.H * c.W);
    s.frames.assign(bytes.begin(), bytes.end());
    for (uint8_t b : s.frames)
      if (b > 1) throw FormatError("dataset: frames must be binary");
  }
  if (!r.at_end()) throw FormatError("dataset: trailing bytes");
  return c;
}

}  // namespace pixeldyn
