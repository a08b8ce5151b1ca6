#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pixeldyn/model.hpp"
#include "pixeldyn/serial.hpp"

namespace pixeldyn {

// Versioned binary container: magic "PDYC", format version, iteration count,
// named parameter blocks (shape + 64-bit floats, little-endian), the loss
// history, and a crc32 trailer. Bit-exact across write -> read -> write.

constexpr uint32_t kCheckpointVersion = 1;

struct NamedBlocks {
  int64_t iteration = 0;
  std::vector<double> loss_history;
  std::vector<std::pair<std::string, Tensor>> blocks;  // ordered

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : blocks)
      if (n == name) return t;
    throw FormatError("checkpoint: missing block " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : blocks)
      if (n == name) return true;
    return false;
  }
};

inline void write_blocks(const std::string& path, const NamedBlocks& nb) {
  ByteWriter w;
  w.magic("PDYC");
  w.u32(kCheckpointVersion);
  w.u64(static_cast<uint64_t>(nb.iteration));
  w.u32(static_cast<uint32_t>(nb.blocks.size()));
  for (const auto& [name, t] : nb.blocks) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<uint32_t>(d));
    for (double x : t.v) w.f64(x);
  }
  w.u32(static_cast<uint32_t>(nb.loss_history.size()));
  for (double x : nb.loss_history) w.f64(x);
  w.seal();
  w.to_file(path);
}

inline NamedBlocks read_blocks(const std::string& path) {
  ByteReader r = ByteReader::from_file(path);
  r.check_seal("checkpoint");
  r.expect_magic("PDYC", "checkpoint");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  NamedBlocks nb;
  nb.iteration = static_cast<int64_t>(r.u64());
  uint32_t nblocks = r.u32();
  for (uint32_t i = 0; i < nblocks; ++i) {
    std::string name = r.str();
    uint32_t rank = r.u32();
    Tensor t;
    size_t total = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(static_cast<int>(r.u32()));
      total *= static_cast<size_t>(t.shape.back());
    }
    t.v.resize(total);
    for (auto& x : t.v) x = r.f64();
    nb.blocks.emplace_back(std::move(name), std::move(t));
  }
  uint32_t nloss = r.u32();
  nb.loss_history.resize(nloss);
  for (auto& x : nb.loss_history) x = r.f64();
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return nb;
}

struct ModelCheckpoint {
  Model model;
  int64_t iteration = 0;
  std::vector<double> loss_history;
};

inline void save_checkpoint(const std::string& path, const ModelCheckpoint& ckpt) {
  NamedBlocks nb;
  nb.iteration = ckpt.iteration;
  nb.loss_history = ckpt.loss_history;
  Model& m = const_cast<Model&>(ckpt.model);
  for (const ParamEntry& e : collect_params(m)) nb.blocks.emplace_back(e.name, *e.tensor);
  Tensor hw(2, 1);
  hw.v = {static_cast<double>(ckpt.model.image_h), static_cast<double>(ckpt.model.image_w)};
  nb.blocks.emplace_back("meta/image_hw", hw);
  write_blocks(path, nb);
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  NamedBlocks nb = read_blocks(path);
  ModelCheckpoint ckpt;
  ckpt.iteration = nb.iteration;
  ckpt.loss_history = nb.loss_history;
  Model& m = ckpt.model;

  // shapes drive reconstruction: object counts come from the s0 block names
  for (const auto& [name, t] : nb.blocks) {
    const std::string prefix = "inference/s0/";
    if (name.rfind(prefix, 0) == 0) m.inference.s0[std::stoi(name.substr(prefix.size()))] = t;
  }
  m.lgssm.delta = nb.get("lgssm/delta");
  m.lgssm.u = nb.get("lgssm/u");
  m.lgssm.sh_chol = nb.get("lgssm/sh_chol");
  m.lgssm.sa_chol = nb.get("lgssm/sa_chol");
  m.lgssm.pi_logits = nb.get("lgssm/pi_logits");
  m.lgssm.mu = nb.get("lgssm/mu");
  m.lgssm.sk_chol = nb.get("lgssm/sk_chol");
  m.renderer.w_alpha = nb.get("renderer/w_alpha");
  m.renderer.b_alpha = nb.get("renderer/b_alpha");
  m.renderer.w_x = nb.get("renderer/w_x");
  m.renderer.b_x = nb.get("renderer/b_x");
  m.renderer.w_v = nb.get("renderer/w_v");
  m.renderer.b_v = nb.get("renderer/b_v");
  m.renderer.theta_x0 = nb.get("renderer/theta_x0");
  m.inference.w_beta = nb.get("inference/w_beta");
  m.inference.b_beta = nb.get("inference/b_beta");
  m.inference.w_s = nb.get("inference/w_s");
  m.inference.b_s = nb.get("inference/b_s");
  m.inference.w_mu = nb.get("inference/w_mu");
  m.inference.b_mu = nb.get("inference/b_mu");
  m.inference.w_sigma = nb.get("inference/w_sigma");
  m.inference.b_sigma = nb.get("inference/b_sigma");
  const Tensor& hw = nb.get("meta/image_hw");
  m.image_h = static_cast<int>(hw.v[0]);
  m.image_w = static_cast<int>(hw.v[1]);
  return ckpt;
}

}  // namespace pixeldyn
