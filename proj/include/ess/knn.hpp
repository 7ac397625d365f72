#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ess/embeddings.hpp"
#include "ess/matrix.hpp"
#include "ess/types.hpp"

namespace ess {

/// Ragged per-query class lists. Plain kNN rows all have length k; rows
/// produced by knn_with_target may be k or k+1 long, or empty for ignored
/// pixels. Holds indices only: selection never participates in gradients.
class NeighborIndex {
 public:
  explicit NeighborIndex(std::size_t k = 0) : k_(k) {}

  std::size_t size() const noexcept { return offsets_.size() - 1; }
  std::size_t k() const noexcept { return k_; }
  std::span<const ClassId> row(std::size_t i) const {
    return {flat_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  void push_row(std::span<const ClassId> ids) {
    flat_.insert(flat_.end(), ids.begin(), ids.end());
    offsets_.push_back(flat_.size());
  }

  /// Total number of gathered (pixel, class) pairs.
  std::size_t total_entries() const noexcept { return flat_.size(); }

  friend bool operator==(const NeighborIndex&, const NeighborIndex&) = default;

 private:
  std::size_t k_;
  std::vector<ClassId> flat_;
  std::vector<std::size_t> offsets_{0};
};

/// How the target class joins its neighbour list.
enum class TargetMerge {
  kDeduplicate,  // set union: the target appears once
  kConcatenate,  // target prepended to all k neighbours, possibly twice
};

/// Exact k nearest centroids for each query row, ascending squared distance,
/// ties by ascending class index. Throws when k == 0 or k > C, or on a
/// dimension mismatch. Results do not depend on `threads`.
NeighborIndex knn_search(const EmbeddingTable& table, const Matrix& queries, std::size_t k,
                         int threads = 1);

/// Per row: target first, then the k nearest classes (minus the target when
/// deduplicating). Ignore-labelled rows are empty. Throws on a label >= C.
NeighborIndex knn_with_target(const EmbeddingTable& table, const Matrix& queries,
                              std::span<const ClassId> labels, std::size_t k,
                              TargetMerge merge = TargetMerge::kDeduplicate, int threads = 1);

/// Prepends each label to its kNN row (shared by knn_with_target and by
/// callers that bring their own negatives).
NeighborIndex merge_targets(const NeighborIndex& neighbors, std::span<const ClassId> labels,
                            std::size_t num_classes, TargetMerge merge);

}  // namespace ess
