#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ess/matrix.hpp"

namespace ess {

enum class ExtractorKind { kIdentity, kLinear, kMlp };

const char* to_string(ExtractorKind kind) noexcept;
/// Throws Error(kConfig) for an unknown name.
ExtractorKind parse_extractor_kind(const std::string& name);

/// Small feature extractor that maps raw F-dimensional features to the
/// d-dimensional embedding space. Stands in for the last layer of a
/// segmentation backbone; anything with forward/backward over rows fits.
///
/// Parameter layout:
///   identity: none (requires F == d)
///   linear:   {W (d x F), b (1 x d)}
///   mlp:      {W1 (h x F), b1 (1 x h), W2 (d x h), b2 (1 x d)}, tanh hidden layer
class FeatureExtractor {
 public:
  struct Activations {
    Matrix hidden;  // tanh outputs, mlp only
  };

  static FeatureExtractor make(ExtractorKind kind, std::size_t in_dim, std::size_t out_dim,
                               std::size_t hidden_dim, std::uint64_t seed);

  ExtractorKind kind() const noexcept { return kind_; }
  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return out_dim_; }
  std::size_t hidden_dim() const noexcept { return hidden_dim_; }

  Matrix forward(const Matrix& x, Activations* acts = nullptr) const;

  /// Parameter gradients (same layout as params()) given dL/d(output). When
  /// `grad_in` is non-null it receives dL/dx.
  std::vector<Matrix> backward(const Matrix& x, const Activations& acts, const Matrix& grad_out,
                               Matrix* grad_in = nullptr) const;

  std::vector<Matrix>& params() noexcept { return params_; }
  const std::vector<Matrix>& params() const noexcept { return params_; }

  friend bool operator==(const FeatureExtractor&, const FeatureExtractor&) = default;

 private:
  ExtractorKind kind_ = ExtractorKind::kIdentity;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::vector<Matrix> params_;
};

}  // namespace ess
