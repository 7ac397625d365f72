#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ess/embeddings.hpp"
#include "ess/knn.hpp"
#include "ess/matrix.hpp"
#include "ess/types.hpp"

namespace ess {

/// Geometry of the class-embedding update when normalization is on.
enum class TableUpdate {
  kProject,   // rows are used as stored and re-projected onto the sphere after each step
  kJacobian,  // rows are normalized inside the loss and gradients flow through that map
};

enum class Reduction { kMean, kSum };

struct LossConfig {
  double tau = 0.05;
  std::size_t k = 8;
  MarginConfig margin{};
  bool use_margin = true;
  MarginGradient margin_gradient = MarginGradient::kSymmetric;
  /// Normalize pixel embeddings and class embeddings onto the unit sphere.
  bool normalize = true;
  TableUpdate table_update = TableUpdate::kProject;
  TargetMerge merge = TargetMerge::kDeduplicate;
  Reduction reduction = Reduction::kMean;
  int threads = 1;
};

/// Throws Error(kInvalidArgument) for tau <= 0, k == 0, or a negative margin.
void validate(const LossConfig& cfg);

struct LossReport {
  double classification_loss = 0.0;
  double regularization_loss = 0.0;
  double total = 0.0;
  /// Gradient w.r.t. the feature rows passed in (before normalization).
  Matrix grad_pixels;
  /// Gradient w.r.t. the table rows as stored.
  Matrix grad_table;
  std::size_t pixels_counted = 0;
};

double log_sum_exp(std::span<const double> z);
/// Log-sum-exp stabilized softmax.
std::vector<double> softmax(std::span<const double> z);

/// Full posterior over all C classes with logits -||x - mu_m||^2 / tau.
std::vector<double> exact_posterior(std::span<const double> x, const EmbeddingTable& centroids,
                                    double tau);

/// Target probability normalized only over `row` (target at position 0).
double approx_posterior(std::span<const double> x, const EmbeddingTable& centroids, double tau,
                        std::span<const ClassId> row);

/// dL/dz for L = -log p[target]: p minus the one-hot target.
std::vector<double> gradient_of_logits(std::span<const double> p, std::size_t target_pos);

/// The class centroids the loss sees: a normalized copy of the rows in
/// Jacobian mode, the stored rows otherwise.
EmbeddingTable effective_centroids(const EmbeddingTable& table, const LossConfig& cfg);
/// The pixel embeddings the loss sees (row-normalized when cfg.normalize).
Matrix effective_pixels(const Matrix& features, const LossConfig& cfg);

struct RegularizationTerm {
  double value = 0.0;
  Matrix grad_table;  // w.r.t. stored rows
};

/// Max-margin term on the effective centroids, gradient mapped back to the
/// stored rows. Zero when cfg.use_margin is off.
RegularizationTerm regularization_term(const EmbeddingTable& table, const LossConfig& cfg);

/// Loss and gradients for a fixed set of gathered classes per pixel. `rows`
/// is typically the output of knn_with_target on the effective pixels; the
/// target must sit at position 0 of each non-empty row. Throws
/// Error(kEmptyBatch) when every pixel is ignored.
LossReport loss_with_neighbors(const Matrix& features, std::span<const ClassId> labels,
                               const NeighborIndex& rows, const EmbeddingTable& table,
                               const LossConfig& cfg);

/// kNN selection (detached) followed by loss_with_neighbors.
LossReport loss_compute(const Matrix& features, std::span<const ClassId> labels,
                        const EmbeddingTable& table, const LossConfig& cfg);

/// Rows gathered by kNN against the effective geometry of `cfg`.
NeighborIndex select_neighbors(const Matrix& features, std::span<const ClassId> labels,
                               const EmbeddingTable& table, const LossConfig& cfg);

}  // namespace ess
