#pragma once

#include <filesystem>
#include <span>

#include "ess/binary_io.hpp"
#include "ess/extractor.hpp"
#include "ess/trainer.hpp"
#include "json.hpp"

namespace ess {

// ESSW extractor blob: "ESSW", u32 version=1, u32 kind, u32 in, u32 hidden,
// u32 out, u32 tensor count, then per tensor u32 rows, u32 cols and
// rows*cols little-endian f32.
inline constexpr std::uint32_t kEsswVersion = 1;

io::Bytes encode_essw(const FeatureExtractor& fx);
FeatureExtractor decode_essw(std::span<const std::uint8_t> bytes);

/// Checkpoint directory layout.
struct CheckpointPaths {
  std::filesystem::path metadata;    // checkpoint.json
  std::filesystem::path extractor;   // extractor.essw
  std::filesystem::path embeddings;  // embeddings.esse
  std::filesystem::path loss_csv;    // loss.csv

  explicit CheckpointPaths(const std::filesystem::path& dir);
};

/// Writes metadata (hyperparameters, iter, seed, epoch metrics), weight
/// blobs and the loss curve into `dir` (created if missing).
void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg,
                     const TrainResult& result, std::size_t feature_dim, std::size_t num_classes);

struct LoadedCheckpoint {
  TrainConfig config;
  Model model;
  std::size_t iter = 0;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// CSV columns: iter,lr_main,lr_embed,cls_loss,reg_loss.
void write_loss_csv(const std::filesystem::path& path, std::span<const IterRecord> history);

}  // namespace ess
