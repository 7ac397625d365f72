#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ess/embeddings.hpp"
#include "ess/matrix.hpp"
#include "ess/types.hpp"
#include "json.hpp"

namespace ess {

/// Nearest-centroid labels (ties to the lowest class index). Equal to the
/// argmax of exact_posterior at any temperature.
LabelBatch predict(const Matrix& pixels, const EmbeddingTable& centroids, int threads = 1);

/// Rows are ground truth, columns are predictions. Ignored pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 0)
      : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::uint64_t total() const noexcept { return total_; }
  std::uint64_t count(std::size_t gt, std::size_t pred) const {
    return counts_[gt * num_classes_ + pred];
  }

  /// Throws on mismatched lengths or an out-of-range label. A predicted
  /// ignore label is also rejected; ground-truth ignores are skipped.
  ConfusionMatrix& accumulate(std::span<const ClassId> pred, std::span<const ClassId> gt);
  /// Exact elementwise merge of a shard.
  ConfusionMatrix& merge(const ConfusionMatrix& other);

  static ConfusionMatrix from_counts(std::size_t num_classes, std::span<const std::uint64_t> counts);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t num_classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

struct Metrics {
  double miou = 0.0;
  double pacc = 0.0;
  double fwiou = 0.0;
  /// nullopt for classes absent from both ground truth and prediction; they
  /// are left out of the mIoU mean.
  std::vector<std::optional<double>> per_class_iou;
};

/// Throws Error(kEmptyBatch) for an empty matrix.
Metrics compute_metrics(const ConfusionMatrix& cm);
nlohmann::json to_json(const Metrics& m);

/// Output-head memory under a dense C-channel head versus a d-channel
/// embedding head plus the C x d table. Backbone activations and optimizer
/// state are not modelled.
struct MemoryEstimate {
  std::uint64_t batch = 0, height = 0, width = 0, num_classes = 0, dim = 0, bytes_per_scalar = 0;
  double baseline_output_bytes = 0.0;
  double ours_output_bytes = 0.0;
  double table_bytes = 0.0;
  double output_ratio = 0.0;  // baseline / ours output, exactly C / d
  double ratio = 0.0;         // baseline / (ours output + table)
};

MemoryEstimate memory_estimate(std::uint64_t batch, std::uint64_t height, std::uint64_t width,
                               std::uint64_t num_classes, std::uint64_t dim,
                               std::uint64_t bytes_per_scalar = 4);
nlohmann::json to_json(const MemoryEstimate& m);

enum class Linkage { kAverage, kSingle, kComplete };
const char* to_string(Linkage l) noexcept;
Linkage parse_linkage(const std::string& name);

/// One merge step. Leaves are 0..C-1; the cluster created by merge s gets id
/// C + s (scipy convention). left < right.
struct MergeStep {
  std::size_t left;
  std::size_t right;
  double height;
  std::size_t size;
};

/// Hierarchical clustering over row L2 distances. Ties pick the lexicographically
/// smallest (left, right) pair of cluster ids.
std::vector<MergeStep> agglomerative_cluster(const EmbeddingTable& table,
                                             Linkage linkage = Linkage::kAverage);
nlohmann::json dendrogram_to_json(std::span<const MergeStep> merges, Linkage linkage);

/// Pearson r. Throws Error(kInvalidArgument) on length mismatch, n < 3, or
/// zero variance in either input.
double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation between row norms and class frequencies.
double norm_frequency_correlation(const EmbeddingTable& table, std::span<const double> frequencies);

}  // namespace ess
