#include "ess/knn.hpp"

#include <algorithm>
#include <string>
#include <utility>

#include "ess/error.hpp"
#include "ess/geometry.hpp"
#include "ess/parallel.hpp"

namespace ess {

namespace {

using Candidate = std::pair<double, ClassId>;  // (squared distance, class)

// Lexicographic on (distance, index): the tie rule.
constexpr bool closer(const Candidate& a, const Candidate& b) { return a < b; }

// Keeps the k best candidates in a sorted buffer. O(C * k) but branch-light
// for the small k used in training.
void select_by_insertion(std::span<const Candidate> all, std::size_t k, std::span<ClassId> out) {
  std::vector<Candidate> best;
  best.reserve(k + 1);
  for (const Candidate& c : all) {
    if (best.size() == k && !closer(c, best.back())) continue;
    auto pos = std::upper_bound(best.begin(), best.end(), c, closer);
    best.insert(pos, c);
    if (best.size() > k) best.pop_back();
  }
  for (std::size_t i = 0; i < k; ++i) out[i] = best[i].second;
}

void select_by_partial_sort(std::vector<Candidate>& all, std::size_t k, std::span<ClassId> out) {
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
  for (std::size_t i = 0; i < k; ++i) out[i] = all[i].second;
}

}  // namespace

NeighborIndex knn_search(const EmbeddingTable& table, const Matrix& queries, std::size_t k,
                         int threads) {
  const std::size_t C = table.num_classes();
  if (k == 0 || k > C) {
    throw_invalid("knn_search: k=" + std::to_string(k) + " must lie in [1, C=" +
                  std::to_string(C) + "]");
  }
  if (queries.rows() > 0 && queries.cols() != table.dim()) {
    throw_invalid("knn_search: query dimension does not match the embedding table");
  }
  const std::size_t n = queries.rows();
  std::vector<ClassId> ids(n * k);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<Candidate> cand(C);
    for (std::size_t q = begin; q < end; ++q) {
      const auto x = queries.row(q);
      for (std::size_t c = 0; c < C; ++c) {
        cand[c] = {sq_dist(x, table.row(c)), static_cast<ClassId>(c)};
      }
      std::span<ClassId> out(ids.data() + q * k, k);
      if (k <= 16 && k < C) {
        select_by_insertion(cand, k, out);
      } else {
        select_by_partial_sort(cand, k, out);
      }
    }
  });
  NeighborIndex result(k);
  for (std::size_t q = 0; q < n; ++q) result.push_row({ids.data() + q * k, k});
  return result;
}

NeighborIndex merge_targets(const NeighborIndex& neighbors, std::span<const ClassId> labels,
                            std::size_t num_classes, TargetMerge merge) {
  if (labels.size() != neighbors.size()) {
    throw_invalid("merge_targets: label count does not match query count");
  }
  NeighborIndex out(neighbors.k());
  std::vector<ClassId> row;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    row.clear();
    const ClassId y = labels[i];
    if (y != kIgnoreLabel) {
      if (y >= num_classes) {
        throw_invalid("label " + std::to_string(y) + " out of range for C=" +
                      std::to_string(num_classes));
      }
      row.push_back(y);
      for (ClassId c : neighbors.row(i)) {
        if (merge == TargetMerge::kDeduplicate && c == y) continue;
        row.push_back(c);
      }
    }
    out.push_row(row);
  }
  return out;
}

NeighborIndex knn_with_target(const EmbeddingTable& table, const Matrix& queries,
                              std::span<const ClassId> labels, std::size_t k,
                              TargetMerge merge, int threads) {
  if (labels.size() != queries.rows()) {
    throw_invalid("knn_with_target: label count does not match query count");
  }
  for (ClassId y : labels) {
    if (y != kIgnoreLabel && y >= table.num_classes()) {
      throw_invalid("label " + std::to_string(y) + " out of range for C=" +
                    std::to_string(table.num_classes()));
    }
  }
  return merge_targets(knn_search(table, queries, k, threads), labels, table.num_classes(),
                       merge);
}

}  // namespace ess
