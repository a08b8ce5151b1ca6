#include <gtest/gtest.h>

#include <fstream>

#include "pixeldyn/dataset.hpp"

using namespace pixeldyn;

namespace {

DatasetConfig small_config() {
  DatasetConfig cfg;
  cfg.T = 30;
  cfg.H = 32;
  cfg.W = 32;
  cfg.R = 2;
  cfg.object_counts = {1, 2};
  cfg.train_per_count = 8;
  cfg.test_per_count = 3;
  cfg.seed = 2024;
  return cfg;
}

}  // namespace

TEST(GenerateTrajectory, PhysicsConstants) {
  DatasetConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.delta, 0.015);
  EXPECT_DOUBLE_EQ(cfg.gravity, 9.81);
  Vec4 u = cfg.force();
  EXPECT_DOUBLE_EQ(u(0), 0.0);
  EXPECT_DOUBLE_EQ(u(1), -9.81 * 0.5 * 0.015 * 0.015);
  EXPECT_DOUBLE_EQ(u(2), 0.0);
  EXPECT_DOUBLE_EQ(u(3), -9.81 * 0.015);
}

TEST(GenerateTrajectory, ConstantAccelerationSecondDifference) {
  DatasetConfig cfg;
  Rng rng(5);
  Trajectory tr = generate_trajectory(cfg, rng, LaunchSide::Left);
  // ground truth h is noise-free (sigma_h = 0): y second difference is -g d^2
  for (int t = 0; t + 2 < cfg.T; ++t) {
    double dd = tr.h(t + 2, 1) - 2 * tr.h(t + 1, 1) + tr.h(t, 1);
    EXPECT_NEAR(dd, -0.00220725, 1e-12);
  }
  // y velocity decreases by exactly g*delta per step
  for (int t = 0; t + 1 < cfg.T; ++t)
    EXPECT_NEAR(tr.h(t + 1, 3) - tr.h(t, 3), -9.81 * 0.015, 1e-14);
}

TEST(GenerateTrajectory, RightSideFlipsXVelocity) {
  DatasetConfig cfg;
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng(100 + rep);
    Trajectory left = generate_trajectory(cfg, rng, LaunchSide::Left);
    EXPECT_GT(left.h(0, 2), 0.0);
    Trajectory right = generate_trajectory(cfg, rng, LaunchSide::Right);
    EXPECT_LT(right.h(0, 2), 0.0);
    // right-side launch interval sits 0.9 * max_x to the right
    EXPECT_GE(right.h(0, 0), cfg.x_lo + 0.9 * cfg.max_x() - 1e-12);
    EXPECT_LE(right.h(0, 0), cfg.x_hi + 0.9 * cfg.max_x() + 1e-12);
  }
}

TEST(Rescale, CorpusExtentMapsToPatchInterval) {
  DatasetConfig cfg = small_config();
  auto [train, test] = generate_dataset(cfg);

  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const Corpus* c : {&train, &test})
    for (const auto& s : c->seqs)
      for (int t = 0; t < cfg.T; ++t)
        for (int n = 0; n < s.n_objects; ++n) {
          min_x = std::min(min_x, s.a_at(t, n, 0, s.n_objects));
          max_x = std::max(max_x, s.a_at(t, n, 0, s.n_objects));
          min_y = std::min(min_y, s.a_at(t, n, 1, s.n_objects));
          max_y = std::max(max_y, s.a_at(t, n, 1, s.n_objects));
        }
  Vec2 lo = train.rescale.apply(Vec2(min_x, min_y));
  Vec2 hi = train.rescale.apply(Vec2(max_x, max_y));
  EXPECT_NEAR(lo(0), cfg.R, 1e-9);
  EXPECT_NEAR(lo(1), cfg.R, 1e-9);
  EXPECT_NEAR(hi(0), cfg.W - 1 - cfg.R, 1e-9);
  EXPECT_NEAR(hi(1), cfg.H - 1 - cfg.R, 1e-9);
  // train and test share the corpus-global map
  EXPECT_DOUBLE_EQ(train.rescale.sx, test.rescale.sx);
  EXPECT_DOUBLE_EQ(train.rescale.oy, test.rescale.oy);
}

TEST(Rescale, RoundTripIdentity) {
  RescaleMap map{3.7, -12.0, 2.1, 5.5};
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    Vec2 p(rng.normal(), rng.normal());
    Vec2 back = map.invert(map.apply(p));
    EXPECT_NEAR(back(0), p(0), 1e-12);
    EXPECT_NEAR(back(1), p(1), 1e-12);
  }
}

// Affine conjugation: rescaled trajectories still satisfy linear dynamics
// with a constant second difference per axis.
TEST(Rescale, PreservesLinearDynamics) {
  DatasetConfig cfg = small_config();
  Rng rng(10);
  Trajectory tr = generate_trajectory(cfg, rng, LaunchSide::Left);
  RescaleMap map{4.0, 7.0, 3.0, -2.0};
  // use noise-free ground truth positions
  double ddx_ref = 0.0, ddy_ref = 0.0;
  for (int t = 0; t + 2 < cfg.T; ++t) {
    Vec2 p0 = map.apply(Vec2(tr.h(t, 0), tr.h(t, 1)));
    Vec2 p1 = map.apply(Vec2(tr.h(t + 1, 0), tr.h(t + 1, 1)));
    Vec2 p2 = map.apply(Vec2(tr.h(t + 2, 0), tr.h(t + 2, 1)));
    double ddx = p2(0) - 2 * p1(0) + p0(0);
    double ddy = p2(1) - 2 * p1(1) + p0(1);
    if (t == 0) {
      ddx_ref = ddx;
      ddy_ref = ddy;
    }
    EXPECT_NEAR(ddx, ddx_ref, 1e-9);
    EXPECT_NEAR(ddy, ddy_ref, 1e-9);
  }
}

TEST(Rasterize, DiscPixelCount) {
  std::vector<uint8_t> frame(32 * 32, 0);
  rasterize(16.0, 16.0, 2, 32, 32, frame);
  int count = 0;
  for (uint8_t b : frame) count += b;
  EXPECT_EQ(count, 13);  // integer offsets with i^2 + j^2 <= 4
}

TEST(Rasterize, CoincidentObjectsIdempotent) {
  std::vector<uint8_t> a(32 * 32, 0), b(32 * 32, 0);
  rasterize(10.2, 20.7, 2, 32, 32, a);
  rasterize(10.2, 20.7, 2, 32, 32, b);
  rasterize(10.2, 20.7, 2, 32, 32, b);
  EXPECT_EQ(a, b);
}

TEST(Rasterize, BorderDiscStaysInside) {
  const int R = 2, H = 32, W = 32;
  std::vector<uint8_t> frame(H * W, 0);
  rasterize(R, R, R, H, W, frame);
  int count = 0;
  for (uint8_t b : frame) count += b;
  EXPECT_EQ(count, 13);
  // nothing outside the image wrote anywhere odd: top-left disc touches border
  EXPECT_EQ(frame[0 * W + 2], 1);  // (row 0, col 2) is the topmost pixel
  EXPECT_EQ(frame[2 * W + 0], 1);
}

TEST(Rasterize, OutOfBoundsRejected) {
  std::vector<uint8_t> frame(32 * 32, 0);
  EXPECT_THROW(rasterize(1.0, 16.0, 2, 32, 32, frame), NumericError);
  EXPECT_THROW(rasterize(16.0, 30.5, 2, 32, 32, frame), NumericError);
}

TEST(Dataset, FramesContainExpectedWhitePixelBudget) {
  DatasetConfig cfg = small_config();
  auto [train, test] = generate_dataset(cfg);
  for (const auto& s : train.seqs)
    for (int t = 0; t < cfg.T; ++t) {
      int count = 0;
      for (int i = 0; i < cfg.H * cfg.W; ++i)
        count += train.frame(&s - train.seqs.data(), t)[i];
      EXPECT_LE(count, 13 * s.n_objects);
      EXPECT_GE(count, 13);  // at least one full disc
    }
}

TEST(Dataset, EmissionNoiseVariance) {
  DatasetConfig cfg = small_config();
  cfg.train_per_count = 40;
  cfg.test_per_count = 1;
  auto [train, test] = generate_dataset(cfg);
  double sq = 0.0;
  size_t n = 0;
  for (const auto& s : train.seqs)
    for (int t = 0; t < cfg.T; ++t)
      for (int obj = 0; obj < s.n_objects; ++obj)
        for (int d = 0; d < 2; ++d) {
          double noise = s.a_at(t, obj, d, s.n_objects) - s.h_at(t, obj, d, s.n_objects);
          sq += noise * noise;
          ++n;
        }
  EXPECT_NEAR(sq / n, cfg.sigma_a, 0.1 * cfg.sigma_a);
}

TEST(DatasetIo, RoundTripBitExact) {
  DatasetConfig cfg = small_config();
  cfg.train_per_count = 5;
  cfg.test_per_count = 2;
  auto [train, test] = generate_dataset(cfg);
  std::string p1 = testing::TempDir() + "/corpus1.pdy";
  std::string p2 = testing::TempDir() + "/corpus2.pdy";
  write_dataset(p1, train);
  Corpus back = read_dataset(p1);
  EXPECT_EQ(back.T, train.T);
  EXPECT_EQ(back.H, train.H);
  EXPECT_EQ(back.seqs.size(), train.seqs.size());
  EXPECT_DOUBLE_EQ(back.rescale.sx, train.rescale.sx);
  write_dataset(p2, back);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s1, s2);

  for (size_t i = 0; i < train.seqs.size(); ++i) {
    EXPECT_EQ(back.seqs[i].n_objects, train.seqs[i].n_objects);
    EXPECT_EQ(back.seqs[i].frames, train.seqs[i].frames);
    EXPECT_EQ(back.seqs[i].h, train.seqs[i].h);
    EXPECT_EQ(back.seqs[i].a, train.seqs[i].a);
  }
}

TEST(DatasetIo, CorruptedByteRejected) {
  DatasetConfig cfg = small_config();
  cfg.train_per_count = 2;
  cfg.test_per_count = 1;
  auto [train, test] = generate_dataset(cfg);
  std::string path = testing::TempDir() + "/corpus_corrupt.pdy";
  write_dataset(path, train);
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.seekg(200);
  char byte;
  f.get(byte);
  byte ^= 0x01;
  f.seekp(200);
  f.put(byte);
  f.close();
  EXPECT_THROW(read_dataset(path), FormatError);
}

TEST(DatasetIo, BadMagicAndTruncationRejected) {
  std::string path = testing::TempDir() + "/bogus.pdy";
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  EXPECT_THROW(read_dataset(path), FormatError);

  DatasetConfig cfg = small_config();
  cfg.train_per_count = 2;
  cfg.test_per_count = 1;
  auto [train, test] = generate_dataset(cfg);
  std::string full = testing::TempDir() + "/full.pdy";
  write_dataset(full, train);
  std::ifstream in(full, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string trunc_path = testing::TempDir() + "/trunc.pdy";
  std::ofstream out(trunc_path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  EXPECT_THROW(read_dataset(trunc_path), FormatError);
}

TEST(Dataset, DeterministicGivenSeed) {
  DatasetConfig cfg = small_config();
  cfg.train_per_count = 3;
  cfg.test_per_count = 1;
  auto [a_train, a_test] = generate_dataset(cfg);
  auto [b_train, b_test] = generate_dataset(cfg);
  ASSERT_EQ(a_train.seqs.size(), b_train.seqs.size());
  for (size_t i = 0; i < a_train.seqs.size(); ++i) {
    EXPECT_EQ(a_train.seqs[i].frames, b_train.seqs[i].frames);
    EXPECT_EQ(a_train.seqs[i].h, b_train.seqs[i].h);
  }
}
