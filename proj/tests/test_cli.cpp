#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "pixeldyn/cli.hpp"

using namespace pixeldyn;

TEST(Config, PresetDesk32) {
  RunConfig rc;
  apply_preset(rc, "desk32");
  EXPECT_EQ(rc.H, 32);
  EXPECT_EQ(rc.W, 32);
  EXPECT_EQ(rc.T, 30);
  EXPECT_EQ(rc.counts, (std::vector<int>{1, 2}));
  EXPECT_EQ(rc.s_dim, 256);
  EXPECT_EQ(rc.d_dim, 256);
  EXPECT_EQ(rc.iterations, 20000);
  EXPECT_EQ(rc.freeze_iters, 5000);
  EXPECT_EQ(rc.anneal_start, 5000);
  EXPECT_EQ(rc.anneal_end, 15000);
  EXPECT_EQ(rc.edlstm_hidden, 256);
}

TEST(Config, PresetPaper48) {
  RunConfig rc;
  apply_preset(rc, "paper48");
  EXPECT_EQ(rc.H, 48);
  EXPECT_EQ(rc.T, 30);
  EXPECT_EQ(rc.counts, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(rc.s_dim, 1024);
  EXPECT_EQ(rc.iterations, 200000);
  EXPECT_DOUBLE_EQ(rc.beta_start, 100.0);
  EXPECT_DOUBLE_EQ(rc.beta_end, 1.0);
  EXPECT_DOUBLE_EQ(rc.lr, 0.001);
  EXPECT_EQ(rc.batch, 20);
}

TEST(Config, UnknownPresetRejected) {
  RunConfig rc;
  EXPECT_THROW(apply_preset(rc, "desk99"), ConfigError);
}

TEST(Config, UnknownKeyRejected) {
  RunConfig rc;
  EXPECT_THROW(apply_config_entry(rc, "bogus_key", "1"), ConfigError);
}

TEST(Config, FileParsingWithCommentsAndOverrides) {
  std::string path = testing::TempDir() + "/cfg.txt";
  {
    std::ofstream f(path);
    f << "# a comment\n";
    f << "  h = 24   # trailing comment\n";
    f << "counts=1,3\n";
    f << "\n";
    f << "lr=0.01\n";
  }
  RunConfig rc;
  apply_preset(rc, "desk32");
  apply_config_file(rc, path);
  EXPECT_EQ(rc.H, 24);
  EXPECT_EQ(rc.W, 32);  // untouched by the file
  EXPECT_EQ(rc.counts, (std::vector<int>{1, 3}));
  EXPECT_DOUBLE_EQ(rc.lr, 0.01);
}

TEST(Config, MalformedLineRejected) {
  std::string path = testing::TempDir() + "/bad.txt";
  {
    std::ofstream f(path);
    f << "justakeywithoutvalue\n";
  }
  RunConfig rc;
  EXPECT_THROW(apply_config_file(rc, path), ConfigError);
}

TEST(Config, MissingFileRejected) {
  RunConfig rc;
  EXPECT_THROW(apply_config_file(rc, "/nonexistent/nope.cfg"), ConfigError);
}

TEST(Config, TrainConfigMapping) {
  RunConfig rc;
  apply_preset(rc, "desk32");
  rc.seed = 1234;
  TrainConfig tc = train_config_of(rc);
  EXPECT_EQ(tc.iterations, 20000);
  EXPECT_EQ(tc.freeze_iters, 5000);
  EXPECT_EQ(tc.anneal_start, 5000);
  EXPECT_EQ(tc.anneal_end, 15000);
  EXPECT_EQ(tc.seed, 1234u);
  EXPECT_EQ(tc.s_dim, 256);
  EXPECT_DOUBLE_EQ(tc.grad_clip, 100.0);
}

TEST(Config, OutDirFromEnvRoot) {
  setenv("PIXELDYN_OUT", (testing::TempDir() + "/outroot").c_str(), 1);
  std::string out = resolve_out("", "generate");
  EXPECT_NE(out.find("outroot"), std::string::npos);
  EXPECT_NE(out.find("generate"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(out));
  unsetenv("PIXELDYN_OUT");
}

TEST(Config, ManifestWritten) {
  RunConfig rc;
  apply_preset(rc, "desk32");
  rc.seed = 77;
  std::string dir = testing::TempDir() + "/manifest_test";
  std::filesystem::create_directories(dir);
  write_manifest(dir, "generate", rc);
  std::ifstream f(dir + "/manifest.json");
  ASSERT_TRUE(f.good());
  nlohmann::json j;
  f >> j;
  EXPECT_EQ(j["command"], "generate");
  EXPECT_EQ(j["seed"], 77);
  EXPECT_EQ(j["config"]["h"], 32);
  EXPECT_EQ(j["config"]["iterations"], 20000);
}
