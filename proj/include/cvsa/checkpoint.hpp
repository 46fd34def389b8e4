#pragma once

#include <cstdint>
#include <filesystem>

#include "cvsa/augment.hpp"
#include "cvsa/network.hpp"
#include "cvsa/optim.hpp"

namespace cvsa {

struct TrainConfig {
  std::size_t batch_size = 16;
  double base_lr = 0.6;
  std::size_t total_steps = 400;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int stage = 1;
  std::size_t freeze_k = 2;  // applied in stage 2
  double lambda = 0.5;
  double beta = 0.2;
  AugConfig::FusionMode fusion = AugConfig::FusionMode::same;
  std::uint64_t seed = 0;

  // scaling rule: lr grows linearly with the batch
  double effective_lr() const {
    return base_lr * static_cast<double>(batch_size) / 256.0;
  }
  void validate() const;
};

// Serialized training state: JSON manifest (ckpt.json) plus one raw
// little-endian float64 blob per named tensor, concatenated in manifest order
// (ckpt.bin). Save/load round-trips byte-exactly.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int stage = 1;
  std::uint64_t step = 0;
  TrainConfig train_cfg;
  ModelParams params;  // model config rides inside
  OptimizerState opt;

  std::size_t frozen_count() const {
    std::size_t k = 0;
    for (const ConvStage& s : params.stages) k += s.frozen ? 1 : 0;
    return k;
  }
};

void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace cvsa
