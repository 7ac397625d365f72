#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ess/binary_io.hpp"
#include "ess/matrix.hpp"
#include "ess/types.hpp"

namespace ess {

enum class ClassDistribution { kUniform, kZipf };

/// Gaussian-mixture generator settings. Each class owns a fixed unit-norm
/// prototype in feature space; a pixel is its class prototype plus isotropic
/// noise of scale `sigma`.
struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 16;
  std::size_t pixels_per_image = 1024;
  std::size_t num_images = 16;
  ClassDistribution distribution = ClassDistribution::kUniform;
  double zipf_exponent = 1.0;
  double sigma = 0.3;
  /// Fraction of pixels whose label is replaced by the ignore sentinel.
  double ignore_fraction = 0.0;
  std::uint64_t seed = 0;
};

void validate(const SyntheticSpec& spec);

/// Dense-labelled features in single precision, row-major N x F.
struct Dataset {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::vector<float> features;
  LabelBatch labels;
  /// Ground-truth class prototypes (C x F) for synthetic data; empty otherwise.
  std::vector<float> prototypes;

  std::size_t size() const noexcept { return labels.size(); }
  bool has_prototypes() const noexcept { return !prototypes.empty(); }
  std::span<const float> feature_row(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }

  /// Rows `indices` widened to double.
  Matrix gather(std::span<const std::size_t> indices) const;
  LabelBatch gather_labels(std::span<const std::size_t> indices) const;
  Matrix all_features() const;
  /// Pixels [begin, end) with the same classes and prototypes.
  Dataset slice(std::size_t begin, std::size_t end) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset gen_synthetic(const SyntheticSpec& spec);

/// Class probabilities implied by a spec (uniform, or proportional to
/// 1 / (c + 1)^s for zipf).
std::vector<double> class_probabilities(const SyntheticSpec& spec);

/// Per-class counts of non-ignored labels.
std::vector<std::size_t> class_histogram(const Dataset& data);

/// Accuracy of the maximum-likelihood rule under the generating model
/// (nearest prototype, ties to the lowest index) over non-ignored pixels.
/// Throws Error(kInvalidArgument) when the dataset carries no prototypes.
double bayes_accuracy(const Dataset& data);

// ESSD: "ESSD", u32 version=1, u64 N, u32 F, u32 C, u8 flags, N*F f32
// features, N u32 labels (0xFFFFFFFF = ignore), then C*F f32 prototypes when
// flags bit 0 is set. All little-endian.
inline constexpr std::uint32_t kEssdVersion = 1;
inline constexpr std::uint8_t kEssdHasPrototypes = 0x1;

io::Bytes encode_essd(const Dataset& data);
Dataset decode_essd(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ess
