#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pixeldyn/edlstm.hpp"
#include "pixeldyn/eval.hpp"
#include "pixeldyn/parallel.hpp"
#include "pixeldyn/trainer.hpp"

namespace pixeldyn {

constexpr const char* kVersion = "0.1.0";

// Resolved run settings: preset defaults, overridden by a key=value config
// file, overridden by explicit flags.
struct RunConfig {
  std::string preset = "paper48";
  uint64_t seed = 1;
  int threads = 0;  // 0 -> hardware default

  // dataset
  int T = 30, H = 48, W = 48, R = 2;
  std::vector<int> counts{1, 2, 3};
  int train_per_count = 5000;
  int test_per_count = 500;

  // model + training
  int s_dim = 1024, d_dim = 1024, k_mixture = 2;
  int64_t iterations = 200000;
  int batch = 20;
  int64_t freeze_iters = 10000;
  int64_t anneal_start = 10000, anneal_end = 50000;
  double beta_start = 100.0, beta_end = 1.0;
  int mc_samples = 1;
  double lr = 0.001;
  double grad_clip = 100.0;
  int64_t checkpoint_interval = 5000;

  // baseline
  int edlstm_enc = 1024, edlstm_hidden = 2048;
  int64_t edlstm_iterations = 200000;

  // eval
  int limit = 100;
  int plots = 8;
  int horizon = 25;
  int observed = 5;
};

inline void apply_preset(RunConfig& rc, const std::string& name) {
  if (name == "paper48") {
    rc = RunConfig{};
    rc.preset = name;
  } else if (name == "desk32") {
    rc = RunConfig{};
    rc.preset = name;
    rc.H = rc.W = 32;
    rc.counts = {1, 2};
    rc.train_per_count = 2500;
    rc.test_per_count = 500;
    rc.s_dim = rc.d_dim = 256;
    rc.iterations = 20000;
    rc.freeze_iters = 5000;
    rc.anneal_start = 5000;
    rc.anneal_end = 15000;
    rc.checkpoint_interval = 5000;
    rc.edlstm_enc = 256;
    rc.edlstm_hidden = 256;
    rc.edlstm_iterations = 20000;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
}

inline void apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value) {
  auto as_i = [&] { return std::stoll(value); };
  auto as_d = [&] { return std::stod(value); };
  if (key == "seed") rc.seed = static_cast<uint64_t>(as_i());
  else if (key == "threads") rc.threads = static_cast<int>(as_i());
  else if (key == "t") rc.T = static_cast<int>(as_i());
  else if (key == "h") rc.H = static_cast<int>(as_i());
  else if (key == "w") rc.W = static_cast<int>(as_i());
  else if (key == "r") rc.R = static_cast<int>(as_i());
  else if (key == "counts") {
    rc.counts.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) rc.counts.push_back(std::stoi(item));
  } else if (key == "train_per_count") rc.train_per_count = static_cast<int>(as_i());
  else if (key == "test_per_count") rc.test_per_count = static_cast<int>(as_i());
  else if (key == "s_dim") rc.s_dim = static_cast<int>(as_i());
  else if (key == "d_dim") rc.d_dim = static_cast<int>(as_i());
  else if (key == "k_mixture") rc.k_mixture = static_cast<int>(as_i());
  else if (key == "iterations") rc.iterations = as_i();
  else if (key == "batch") rc.batch = static_cast<int>(as_i());
  else if (key == "freeze_iters") rc.freeze_iters = as_i();
  else if (key == "anneal_start") rc.anneal_start = as_i();
  else if (key == "anneal_end") rc.anneal_end = as_i();
  else if (key == "beta_start") rc.beta_start = as_d();
  else if (key == "beta_end") rc.beta_end = as_d();
  else if (key == "mc_samples") rc.mc_samples = static_cast<int>(as_i());
  else if (key == "lr") rc.lr = as_d();
  else if (key == "grad_clip") rc.grad_clip = as_d();
  else if (key == "checkpoint_interval") rc.checkpoint_interval = as_i();
  else if (key == "edlstm_enc") rc.edlstm_enc = static_cast<int>(as_i());
  else if (key == "edlstm_hidden") rc.edlstm_hidden = static_cast<int>(as_i());
  else if (key == "edlstm_iterations") rc.edlstm_iterations = as_i();
  else if (key == "limit") rc.limit = static_cast<int>(as_i());
  else if (key == "plots") rc.plots = static_cast<int>(as_i());
  else if (key == "horizon") rc.horizon = static_cast<int>(as_i());
  else if (key == "observed") rc.observed = static_cast<int>(as_i());
  else throw ConfigError("unknown config key: " + key);
}

inline void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_config_entry(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline nlohmann::json config_json(const RunConfig& rc) {
  nlohmann::json j;
  j["preset"] = rc.preset;
  j["seed"] = rc.seed;
  j["threads"] = rc.threads;
  j["t"] = rc.T;
  j["h"] = rc.H;
  j["w"] = rc.W;
  j["r"] = rc.R;
  j["counts"] = rc.counts;
  j["train_per_count"] = rc.train_per_count;
  j["test_per_count"] = rc.test_per_count;
  j["s_dim"] = rc.s_dim;
  j["d_dim"] = rc.d_dim;
  j["k_mixture"] = rc.k_mixture;
  j["iterations"] = rc.iterations;
  j["batch"] = rc.batch;
  j["freeze_iters"] = rc.freeze_iters;
  j["anneal_start"] = rc.anneal_start;
  j["anneal_end"] = rc.anneal_end;
  j["beta_start"] = rc.beta_start;
  j["beta_end"] = rc.beta_end;
  j["mc_samples"] = rc.mc_samples;
  j["lr"] = rc.lr;
  j["grad_clip"] = rc.grad_clip;
  j["checkpoint_interval"] = rc.checkpoint_interval;
  j["edlstm_enc"] = rc.edlstm_enc;
  j["edlstm_hidden"] = rc.edlstm_hidden;
  j["edlstm_iterations"] = rc.edlstm_iterations;
  j["limit"] = rc.limit;
  j["plots"] = rc.plots;
  j["horizon"] = rc.horizon;
  j["observed"] = rc.observed;
  return j;
}

inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const RunConfig& rc) {
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = rc.seed;
  j["config"] = config_json(rc);
  std::ofstream f(out_dir + "/manifest.json", std::ios::trunc);
  if (!f) throw FormatError("cannot write manifest in " + out_dir);
  f << j.dump(2) << "\n";
}

inline std::string resolve_out(const std::string& flag_value, const std::string& command) {
  std::string out = flag_value;
  if (out.empty()) {
    const char* root = std::getenv("PIXELDYN_OUT");
    out = (root && *root) ? std::string(root) + "/" + command : std::string("./pixeldyn_") + command;
  }
  std::filesystem::create_directories(out);
  return out;
}

inline TrainConfig train_config_of(const RunConfig& rc) {
  TrainConfig tc;
  tc.batch = rc.batch;
  tc.iterations = rc.iterations;
  tc.freeze_iters = rc.freeze_iters;
  tc.anneal_start = rc.anneal_start;
  tc.anneal_end = rc.anneal_end;
  tc.beta_start = rc.beta_start;
  tc.beta_end = rc.beta_end;
  tc.mc_samples = rc.mc_samples;
  tc.lr = rc.lr;
  tc.seed = rc.seed;
  tc.checkpoint_interval = rc.checkpoint_interval;
  tc.grad_clip = rc.grad_clip;
  tc.s_dim = rc.s_dim;
  tc.d_dim = rc.d_dim;
  tc.k_mixture = rc.k_mixture;
  return tc;
}

// ---- subcommands --------------------------------------------------------------

inline int cmd_generate(const RunConfig& rc, const std::string& out_dir) {
  DatasetConfig cfg;
  cfg.T = rc.T;
  cfg.H = rc.H;
  cfg.W = rc.W;
  cfg.R = rc.R;
  cfg.object_counts = rc.counts;
  cfg.train_per_count = rc.train_per_count;
  cfg.test_per_count = rc.test_per_count;
  cfg.seed = rc.seed;
  auto [train, test] = generate_dataset(cfg);
  write_dataset(out_dir + "/train.pdy", train);
  write_dataset(out_dir + "/test.pdy", test);
  write_manifest(out_dir, "generate", rc);
  std::printf("wrote %zu train / %zu test sequences to %s\n", train.seqs.size(), test.seqs.size(),
              out_dir.c_str());
  return 0;
}

inline int cmd_train(const RunConfig& rc, const std::string& out_dir, const std::string& data) {
  Corpus corpus = read_dataset(data);
  std::vector<int> counts;
  for (const auto& s : corpus.seqs)
    if (std::find(counts.begin(), counts.end(), s.n_objects) == counts.end())
      counts.push_back(s.n_objects);
  std::sort(counts.begin(), counts.end());

  Model model = initialize(rc.seed, corpus.H * corpus.W, rc.s_dim, rc.d_dim, rc.k_mixture, counts,
                           corpus.H, corpus.W);

  std::ofstream csv(out_dir + "/loss.csv", std::ios::trunc);
  if (!csv) throw FormatError("cannot write loss.csv in " + out_dir);
  csv << "iteration,elbo,recon,kl,beta\n";
  char row[256];
  TrainHooks hooks;
  hooks.on_log = [&](int64_t iter, double elbo, double recon, double kl, double beta) {
    std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(iter), elbo, recon, kl, beta);
    csv << row;
    if (iter % 100 == 0) csv.flush();
    if (iter % 500 == 0)
      std::printf("iter %lld  elbo %.3f  recon_nll %.3f  kl %.3f  beta %.2f\n",
                  static_cast<long long>(iter), elbo, recon, kl, beta);
  };
  hooks.on_checkpoint = [&](const ModelCheckpoint& ckpt, bool is_final) {
    std::string path = is_final ? out_dir + "/model.pdyc"
                                : out_dir + "/ckpt_" + std::to_string(ckpt.iteration) + ".pdyc";
    save_checkpoint(path, ckpt);
  };

  write_manifest(out_dir, "train", rc);
  ModelCheckpoint out = train(train_config_of(rc), corpus, std::move(model), hooks);
  std::printf("trained %lld iterations; checkpoint at %s/model.pdyc\n",
              static_cast<long long>(out.iteration), out_dir.c_str());
  return 0;
}

inline int cmd_eval(const RunConfig& rc, const std::string& out_dir, const std::string& task,
                    const std::string& checkpoint_path, const std::string& data) {
  Corpus corpus = read_dataset(data);
  ModelCheckpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.model.image_h != corpus.H || ckpt.model.image_w != corpus.W)
    throw ConfigError("eval: checkpoint image size does not match dataset");

  std::ofstream report(out_dir + "/report.jsonl", std::ios::trunc);
  if (!report) throw FormatError("cannot write report in " + out_dir);
  const size_t limit = std::min<size_t>(static_cast<size_t>(rc.limit), corpus.seqs.size());

  if (task == "infer") {
    auto records = position_inference_task(ckpt.model, corpus, limit, out_dir,
                                           static_cast<size_t>(rc.plots));
    std::vector<double> errs;
    for (const auto& r : records) {
      nlohmann::json j{{"task", "infer"},
                       {"sequence", r.sequence},
                       {"n_objects", r.n_objects},
                       {"aligned_rms", r.aligned_rms}};
      report << j.dump() << "\n";
      errs.push_back(r.aligned_rms);
    }
    std::sort(errs.begin(), errs.end());
    double median = errs.empty() ? 0.0 : errs[errs.size() / 2];
    nlohmann::json j{{"task", "infer"}, {"summary", true}, {"sequences", errs.size()},
                     {"median_aligned_rms", median}};
    report << j.dump() << "\n";
    std::printf("infer: %zu sequences, median aligned rms %.3f px\n", errs.size(), median);
  } else if (task == "generate") {
    double total = 0.0;
    for (size_t i = 0; i < limit; ++i) {
      GenerationResult res = generation_task(ckpt.model, corpus, i, rc.horizon, rc.observed);
      nlohmann::json j{{"task", "generate"}, {"sequence", i}, {"mean_nll", res.mean_nll}};
      report << j.dump() << "\n";
      total += res.mean_nll;
      if (i < static_cast<size_t>(rc.plots)) {
        std::vector<std::vector<uint8_t>> gen_frames, truth_frames;
        for (int step = 0; step < rc.horizon; ++step) {
          gen_frames.push_back(binarize(res.probs[static_cast<size_t>(step)]));
          auto tf = corpus.frame(i, rc.observed + step);
          truth_frames.emplace_back(tf.begin(), tf.end());
        }
        auto panel = side_by_side(overlay_frames(gen_frames), overlay_frames(truth_frames),
                                  corpus.H, corpus.W);
        write_pgm(out_dir + "/gen_" + std::to_string(i) + ".pgm", corpus.H, 2 * corpus.W + 1,
                  panel);
      }
    }
    nlohmann::json j{{"task", "generate"}, {"summary", true}, {"sequences", limit},
                     {"mean_nll", total / std::max<size_t>(limit, 1)}};
    report << j.dump() << "\n";
    std::printf("generate: %zu sequences, mean per-pixel nll %.4f\n", limit,
                total / std::max<size_t>(limit, 1));
  } else if (task == "interpolate") {
    double gen_total = 0.0, interp_total = 0.0;
    int wins = 0, ties = 0;
    for (size_t i = 0; i < limit; ++i) {
      InterpolationResult res = interpolation_task(ckpt.model, corpus, i, rc.observed);
      InterpolationScore sc = score_interpolation(corpus, i, res, rc.observed);
      nlohmann::json j{{"task", "interpolate"},
                       {"sequence", i},
                       {"gen_err", sc.gen_err},
                       {"interp_err", sc.interp_err}};
      report << j.dump() << "\n";
      gen_total += sc.gen_err;
      interp_total += sc.interp_err;
      if (sc.interp_err < sc.gen_err) ++wins;
      if (sc.interp_err == sc.gen_err) ++ties;
      if (i < static_cast<size_t>(rc.plots)) {
        std::vector<SvgCurve> curves;
        auto truth = truth_trajectories(corpus, i, 0, corpus.T);
        AlignmentResult ar = align(res.interpolated, truth);
        for (const auto& tr : truth) curves.push_back({"black", tr});
        for (const auto& m : res.generated) {
          Eigen::MatrixXd mapped(m.rows(), 2);
          for (int t = 0; t < m.rows(); ++t)
            mapped.row(t) = ar.transform.apply(m.row(t).transpose()).transpose();
          curves.push_back({"red", mapped});
        }
        for (const auto& m : res.interpolated) {
          Eigen::MatrixXd mapped(m.rows(), 2);
          for (int t = 0; t < m.rows(); ++t)
            mapped.row(t) = ar.transform.apply(m.row(t).transpose()).transpose();
          curves.push_back({"cyan", mapped});
        }
        write_svg_trajectories(out_dir + "/interp_" + std::to_string(i) + ".svg", corpus.W,
                               corpus.H, curves);
      }
    }
    int n_eff = static_cast<int>(limit) - ties;
    double p = n_eff > 0 ? sign_test_p(wins, n_eff) : 1.0;
    nlohmann::json j{{"task", "interpolate"},
                     {"summary", true},
                     {"sequences", limit},
                     {"mean_gen_err", gen_total / std::max<size_t>(limit, 1)},
                     {"mean_interp_err", interp_total / std::max<size_t>(limit, 1)},
                     {"wins", wins},
                     {"sign_test_p", p}};
    report << j.dump() << "\n";
    std::printf("interpolate: %zu sequences, gen err %.3f vs interp err %.3f (p=%.4g)\n", limit,
                gen_total / std::max<size_t>(limit, 1), interp_total / std::max<size_t>(limit, 1),
                p);
  } else {
    throw ConfigError("unknown eval task: " + task);
  }
  write_manifest(out_dir, "eval_" + task, rc);
  return 0;
}

inline int cmd_baseline(const RunConfig& rc, const std::string& out_dir, const std::string& data,
                        const std::string& test_data) {
  Corpus corpus = read_dataset(data);
  EdLstmConfig cfg;
  cfg.enc_dim = rc.edlstm_enc;
  cfg.hidden = rc.edlstm_hidden;
  cfg.iterations = rc.edlstm_iterations;
  cfg.batch = rc.batch;
  cfg.lr = rc.lr;
  cfg.seed = rc.seed;
  cfg.grad_clip = rc.grad_clip;
  cfg.checkpoint_interval = rc.checkpoint_interval;

  EdLstmParams params = initialize_edlstm(rc.seed, corpus.H * corpus.W, cfg.enc_dim, cfg.hidden,
                                          corpus.H, corpus.W);

  std::ofstream csv(out_dir + "/loss.csv", std::ios::trunc);
  csv << "iteration,nll\n";
  char row[128];
  std::vector<double> history;
  EdLstmHooks hooks;
  hooks.on_log = [&](int64_t iter, double nll) {
    std::snprintf(row, sizeof(row), "%lld,%.17g\n", static_cast<long long>(iter), nll);
    csv << row;
    history.push_back(nll);
    if (iter % 100 == 0) csv.flush();
    if (iter % 500 == 0)
      std::printf("edlstm iter %lld  nll %.4f\n", static_cast<long long>(iter), nll);
  };
  hooks.on_checkpoint = [&](const EdLstmParams& p, int64_t iter, bool is_final) {
    std::string path =
        is_final ? out_dir + "/edlstm.pdyc" : out_dir + "/edlstm_" + std::to_string(iter) + ".pdyc";
    save_edlstm(path, p, iter, history);
  };

  write_manifest(out_dir, "baseline", rc);
  params = train_edlstm(cfg, corpus, std::move(params), hooks);

  if (!test_data.empty()) {
    Corpus test = read_dataset(test_data);
    std::ofstream report(out_dir + "/report.jsonl", std::ios::trunc);
    const size_t limit = std::min<size_t>(static_cast<size_t>(rc.limit), test.seqs.size());
    double total = 0.0;
    for (size_t i = 0; i < limit; ++i) {
      double nll = edlstm_generation_nll(params, test, i, rc.horizon, rc.observed);
      nlohmann::json j{{"task", "baseline_generate"}, {"sequence", i}, {"mean_nll", nll}};
      report << j.dump() << "\n";
      total += nll;
    }
    nlohmann::json j{{"task", "baseline_generate"}, {"summary", true}, {"sequences", limit},
                     {"mean_nll", total / std::max<size_t>(limit, 1)}};
    report << j.dump() << "\n";
    std::printf("edlstm generate: %zu sequences, mean per-pixel nll %.4f\n", limit,
                total / std::max<size_t>(limit, 1));
  }
  return 0;
}

inline int cli_main(int argc, char** argv) {
  CLI::App app{"pixeldyn: unsupervised multi-object dynamics from binary image sequences"};
  app.require_subcommand(1);

  std::string config_path, out_flag, preset_flag, data_flag, test_flag, checkpoint_flag,
      task_flag = "infer";
  uint64_t seed_flag = 0;
  int threads_flag = 0;
  int64_t iterations_flag = 0;
  int batch_flag = 0;
  int limit_flag = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--out", out_flag, "output directory (default: $PIXELDYN_OUT/<command>)");
    cmd->add_option("--seed", seed_flag, "RNG seed");
    cmd->add_option("--preset", preset_flag, "paper48 or desk32");
    cmd->add_option("--threads", threads_flag, "worker threads (default: hardware)");
    cmd->add_option("--iterations", iterations_flag, "training iterations");
    cmd->add_option("--batch", batch_flag, "mini-batch size");
    cmd->add_option("--limit", limit_flag, "max sequences for evaluation");
  };

  CLI::App* generate = app.add_subcommand("generate", "generate the cannonball corpus");
  add_common(generate);

  CLI::App* train_cmd = app.add_subcommand("train", "train the generative + inference model");
  add_common(train_cmd);
  train_cmd->add_option("--data", data_flag, "training dataset (.pdy)")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "run an evaluation task");
  add_common(eval_cmd);
  eval_cmd->add_option("--task", task_flag, "infer | generate | interpolate");
  eval_cmd->add_option("--checkpoint", checkpoint_flag, "model checkpoint (.pdyc)")->required();
  eval_cmd->add_option("--data", data_flag, "evaluation dataset (.pdy)")->required();

  CLI::App* baseline = app.add_subcommand("baseline", "train + evaluate the ED-LSTM baseline");
  add_common(baseline);
  baseline->add_option("--data", data_flag, "training dataset (.pdy)")->required();
  baseline->add_option("--test", test_flag, "test dataset for the generation report (.pdy)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* cmd = app.get_subcommands().front();

  RunConfig rc;
  if (!preset_flag.empty()) apply_preset(rc, preset_flag);
  if (!config_path.empty()) apply_config_file(rc, config_path);
  if (cmd->count("--seed")) rc.seed = seed_flag;
  if (cmd->count("--threads")) rc.threads = threads_flag;
  if (cmd->count("--iterations")) {
    rc.iterations = iterations_flag;
    rc.edlstm_iterations = iterations_flag;
  }
  if (cmd->count("--batch")) rc.batch = batch_flag;
  if (cmd->count("--limit")) rc.limit = limit_flag;
  set_threads(rc.threads > 0 ? rc.threads : static_cast<int>(std::thread::hardware_concurrency()));

  const std::string name = cmd->get_name();
  std::string out_dir = resolve_out(out_flag, name);
  if (name == "generate") return cmd_generate(rc, out_dir);
  if (name == "train") return cmd_train(rc, out_dir, data_flag);
  if (name == "eval") return cmd_eval(rc, out_dir, task_flag, checkpoint_flag, data_flag);
  if (name == "baseline") return cmd_baseline(rc, out_dir, data_flag, test_flag);
  return 1;
}

}  // namespace pixeldyn
