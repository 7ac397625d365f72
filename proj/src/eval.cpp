#include "ess/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ess/error.hpp"
#include "ess/geometry.hpp"
#include "ess/parallel.hpp"

namespace ess {

LabelBatch predict(const Matrix& pixels, const EmbeddingTable& centroids, int threads) {
  if (pixels.rows() > 0 && pixels.cols() != centroids.dim()) {
    throw_invalid("predict: pixel dimension does not match the embedding table");
  }
  LabelBatch out(pixels.rows());
  parallel_for(pixels.rows(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double best = std::numeric_limits<double>::infinity();
      ClassId arg = 0;
      for (std::size_t c = 0; c < centroids.num_classes(); ++c) {
        const double d2 = sq_dist(pixels.row(i), centroids.row(c));
        if (d2 < best) {
          best = d2;
          arg = static_cast<ClassId>(c);
        }
      }
      out[i] = arg;
    }
  });
  return out;
}

ConfusionMatrix& ConfusionMatrix::accumulate(std::span<const ClassId> pred,
                                             std::span<const ClassId> gt) {
  if (pred.size() != gt.size()) throw_invalid("accumulate: prediction/label length mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    if (gt[i] >= num_classes_ || pred[i] >= num_classes_) {
      throw_invalid("accumulate: label out of range at pixel " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    ++counts_[gt[i] * num_classes_ + pred[i]];
    ++total_;
  }
  return *this;
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw_invalid("merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
  return *this;
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t num_classes,
                                             std::span<const std::uint64_t> counts) {
  if (counts.size() != num_classes * num_classes) throw_invalid("from_counts: need C*C counts");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    cm.counts_[i] = counts[i];
    cm.total_ += counts[i];
  }
  return cm;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(ErrorCode::kEmptyBatch, "metrics: empty confusion matrix");
  const std::size_t C = cm.num_classes();
  std::vector<std::uint64_t> gt_total(C, 0), pred_total(C, 0);
  std::uint64_t trace = 0;
  for (std::size_t g = 0; g < C; ++g) {
    for (std::size_t p = 0; p < C; ++p) {
      gt_total[g] += cm.count(g, p);
      pred_total[p] += cm.count(g, p);
    }
    trace += cm.count(g, g);
  }
  Metrics m;
  m.per_class_iou.resize(C);
  const double total = static_cast<double>(cm.total());
  double iou_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const std::uint64_t tp = cm.count(c, c);
    // TP + FP + FN = |gt_c| + |pred_c| - TP
    const std::uint64_t uni = gt_total[c] + pred_total[c] - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    m.per_class_iou[c] = iou;
    iou_sum += iou;
    ++present;
    m.fwiou += (static_cast<double>(gt_total[c]) / total) * iou;
  }
  m.miou = iou_sum / static_cast<double>(present);
  m.pacc = static_cast<double>(trace) / total;
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : m.per_class_iou) {
    per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  }
  return {{"miou", m.miou}, {"pacc", m.pacc}, {"fwiou", m.fwiou}, {"per_class", per_class}};
}

MemoryEstimate memory_estimate(std::uint64_t batch, std::uint64_t height, std::uint64_t width,
                               std::uint64_t num_classes, std::uint64_t dim,
                               std::uint64_t bytes_per_scalar) {
  if (batch == 0 || height == 0 || width == 0 || num_classes == 0 || dim == 0 ||
      bytes_per_scalar == 0) {
    throw_invalid("memory_estimate: all inputs must be positive");
  }
  MemoryEstimate m{batch, height, width, num_classes, dim, bytes_per_scalar};
  const double pixels = static_cast<double>(batch) * static_cast<double>(height) *
                        static_cast<double>(width);
  const double bytes = static_cast<double>(bytes_per_scalar);
  m.baseline_output_bytes = pixels * static_cast<double>(num_classes) * bytes;
  m.ours_output_bytes = pixels * static_cast<double>(dim) * bytes;
  m.table_bytes = static_cast<double>(num_classes) * static_cast<double>(dim) * bytes;
  m.output_ratio = static_cast<double>(num_classes) / static_cast<double>(dim);
  m.ratio = m.baseline_output_bytes / (m.ours_output_bytes + m.table_bytes);
  return m;
}

nlohmann::json to_json(const MemoryEstimate& m) {
  return {{"batch", m.batch},
          {"height", m.height},
          {"width", m.width},
          {"classes", m.num_classes},
          {"dim", m.dim},
          {"bytes_per_scalar", m.bytes_per_scalar},
          {"baseline_output_bytes", m.baseline_output_bytes},
          {"ours_output_bytes", m.ours_output_bytes},
          {"table_bytes", m.table_bytes},
          {"output_ratio", m.output_ratio},
          {"ratio", m.ratio}};
}

const char* to_string(Linkage l) noexcept {
  switch (l) {
    case Linkage::kAverage: return "average";
    case Linkage::kSingle: return "single";
    case Linkage::kComplete: return "complete";
  }
  return "unknown";
}

Linkage parse_linkage(const std::string& name) {
  if (name == "average") return Linkage::kAverage;
  if (name == "single") return Linkage::kSingle;
  if (name == "complete") return Linkage::kComplete;
  throw Error(ErrorCode::kConfig, "unknown linkage '" + name + "'");
}

std::vector<MergeStep> agglomerative_cluster(const EmbeddingTable& table, Linkage linkage) {
  const std::size_t C = table.num_classes();
  // Distance matrix indexed by slot; slot s holds cluster id ids[s].
  Matrix dist(C, C);
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = i + 1; j < C; ++j) {
      dist(i, j) = dist(j, i) = std::sqrt(sq_dist(table.row(i), table.row(j)));
    }
  }
  std::vector<std::size_t> ids(C), sizes(C, 1);
  std::vector<bool> active(C, true);
  for (std::size_t i = 0; i < C; ++i) ids[i] = i;

  std::vector<MergeStep> merges;
  merges.reserve(C - 1);
  for (std::size_t step = 0; step + 1 < C; ++step) {
    std::size_t a = 0, b = 0;
    double best = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> best_ids{SIZE_MAX, SIZE_MAX};
    for (std::size_t i = 0; i < C; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < C; ++j) {
        if (!active[j]) continue;
        const std::pair<std::size_t, std::size_t> key = std::minmax(ids[i], ids[j]);
        if (dist(i, j) < best || (dist(i, j) == best && key < best_ids)) {
          best = dist(i, j);
          best_ids = key;
          a = i;
          b = j;
        }
      }
    }
    merges.push_back({best_ids.first, best_ids.second, best, sizes[a] + sizes[b]});
    // Lance-Williams update; the merged cluster takes slot a.
    for (std::size_t k = 0; k < C; ++k) {
      if (!active[k] || k == a || k == b) continue;
      double v = 0.0;
      switch (linkage) {
        case Linkage::kAverage:
          v = (static_cast<double>(sizes[a]) * dist(a, k) +
               static_cast<double>(sizes[b]) * dist(b, k)) /
              static_cast<double>(sizes[a] + sizes[b]);
          break;
        case Linkage::kSingle: v = std::min(dist(a, k), dist(b, k)); break;
        case Linkage::kComplete: v = std::max(dist(a, k), dist(b, k)); break;
      }
      dist(a, k) = dist(k, a) = v;
    }
    sizes[a] += sizes[b];
    ids[a] = C + step;
    active[b] = false;
  }
  return merges;
}

nlohmann::json dendrogram_to_json(std::span<const MergeStep> merges, Linkage linkage) {
  nlohmann::json list = nlohmann::json::array();
  for (const MergeStep& m : merges) {
    list.push_back({{"left", m.left}, {"right", m.right}, {"height", m.height}, {"size", m.size}});
  }
  return {{"linkage", to_string(linkage)}, {"leaves", merges.size() + 1}, {"merges", list}};
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw_invalid("pearson: length mismatch");
  if (x.size() < 3) throw_invalid("pearson: need at least 3 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  // A spread below 1e-6 of the mean counts as constant: norms of a
  // normalized table read back from f32 storage differ only by rounding.
  auto constant = [n](double ss, double mean) {
    return ss == 0.0 || std::sqrt(ss / n) <= 1e-6 * std::abs(mean);
  };
  if (constant(sxx, mx) || constant(syy, my)) throw_invalid("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double norm_frequency_correlation(const EmbeddingTable& table,
                                  std::span<const double> frequencies) {
  if (frequencies.size() != table.num_classes()) {
    throw_invalid("norm_frequency_correlation: need one frequency per class");
  }
  std::vector<double> norms(table.num_classes());
  for (std::size_t c = 0; c < norms.size(); ++c) norms[c] = norm(table.row(c));
  return pearson(norms, frequencies);
}

}  // namespace ess
