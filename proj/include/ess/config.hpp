#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ess/data.hpp"
#include "ess/eval.hpp"
#include "ess/trainer.hpp"
#include "json.hpp"

namespace ess {

// JSON mappings. Readers are strict: unknown keys and wrong types raise
// Error(kConfig); missing keys keep the value already in `out`.
nlohmann::json to_json(const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& out);
nlohmann::json to_json(const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& out);

struct PathConfig {
  std::string data;
  std::string eval_data;
  std::string out;
  std::string checkpoint;
  std::string embeddings;
  std::string frequencies;
};

struct BenchConfig {
  std::uint64_t batch = 8;
  std::uint64_t height = 512;
  std::uint64_t width = 512;
  std::uint64_t classes = 1284;
  std::uint64_t dim = 12;
  std::uint64_t bytes_per_scalar = 4;
  /// When non-empty, one estimate per class count at fixed dim.
  std::vector<std::uint64_t> sweep;
};

/// Everything one CLI invocation needs. Each run writes its resolved
/// RunConfig next to its outputs so it can be replayed with --config.
struct RunConfig {
  std::string command;
  int threads = 1;
  SyntheticSpec synthetic{};
  TrainConfig train{};
  PathConfig paths{};
  BenchConfig bench{};
  Linkage linkage = Linkage::kAverage;
};

nlohmann::json to_json(const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& out);
/// Equality of the JSON forms.
bool operator==(const RunConfig& a, const RunConfig& b);

/// Reads a JSON config file on top of `base`. Throws Error(kIo) when the
/// file cannot be read and Error(kConfig) when it does not parse.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
void save_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace ess
