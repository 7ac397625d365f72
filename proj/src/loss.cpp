#include "ess/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ess/error.hpp"
#include "ess/geometry.hpp"
#include "ess/parallel.hpp"

namespace ess {

void validate(const LossConfig& cfg) {
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) throw_invalid("temperature must be > 0");
  if (cfg.k == 0) throw_invalid("k must be >= 1");
  if (!(cfg.margin.margin >= 0.0)) throw_invalid("margin must be >= 0");
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

std::vector<double> softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] - lse);
  return p;
}

std::vector<double> exact_posterior(std::span<const double> x, const EmbeddingTable& centroids,
                                    double tau) {
  std::vector<double> z(centroids.num_classes());
  for (std::size_t c = 0; c < z.size(); ++c) z[c] = -sq_dist(x, centroids.row(c)) / tau;
  return softmax(z);
}

double approx_posterior(std::span<const double> x, const EmbeddingTable& centroids, double tau,
                        std::span<const ClassId> row) {
  if (row.empty()) throw_invalid("approx_posterior: empty neighbour row");
  std::vector<double> z(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) z[j] = -sq_dist(x, centroids.row(row[j])) / tau;
  return std::exp(z[0] - log_sum_exp(z));
}

std::vector<double> gradient_of_logits(std::span<const double> p, std::size_t target_pos) {
  if (target_pos >= p.size()) throw_invalid("gradient_of_logits: target position out of range");
  std::vector<double> g(p.begin(), p.end());
  g[target_pos] -= 1.0;
  return g;
}

EmbeddingTable effective_centroids(const EmbeddingTable& table, const LossConfig& cfg) {
  if (cfg.normalize && cfg.table_update == TableUpdate::kJacobian) {
    return EmbeddingTable(normalize_rows(table.rows()));
  }
  return table;
}

Matrix effective_pixels(const Matrix& features, const LossConfig& cfg) {
  return cfg.normalize ? normalize_rows(features) : features;
}

namespace {

bool jacobian_table(const LossConfig& cfg) {
  return cfg.normalize && cfg.table_update == TableUpdate::kJacobian;
}

// Maps a gradient w.r.t. effective centroids back onto stored rows.
Matrix table_grad_to_rows(const EmbeddingTable& table, Matrix grad, const LossConfig& cfg) {
  if (!jacobian_table(cfg)) return grad;
  Matrix out(grad.rows(), grad.cols());
  for (std::size_t c = 0; c < grad.rows(); ++c) {
    normalize_backward(table.row(c), grad.row(c), out.row(c));
  }
  return out;
}

}  // namespace

RegularizationTerm regularization_term(const EmbeddingTable& table, const LossConfig& cfg) {
  if (!cfg.use_margin) {
    return {0.0, Matrix(table.num_classes(), table.dim())};
  }
  const EmbeddingTable centroids = effective_centroids(table, cfg);
  MarginLoss ml = max_margin_loss(centroids, cfg.margin, cfg.margin_gradient);
  return {ml.value, table_grad_to_rows(table, std::move(ml.grad), cfg)};
}

LossReport loss_with_neighbors(const Matrix& features, std::span<const ClassId> labels,
                               const NeighborIndex& rows, const EmbeddingTable& table,
                               const LossConfig& cfg) {
  validate(cfg);
  const std::size_t n = features.rows();
  const std::size_t d = table.dim();
  const std::size_t C = table.num_classes();
  if (labels.size() != n || rows.size() != n) {
    throw_invalid("loss: features, labels and neighbour rows must have equal length");
  }
  if (n > 0 && features.cols() != d) {
    throw_invalid("loss: feature dimension " + std::to_string(features.cols()) +
                  " does not match embedding dimension " + std::to_string(d));
  }

  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const ClassId y = labels[i];
    if (y == kIgnoreLabel) {
      if (!rows.row(i).empty()) throw_invalid("loss: ignored pixel has a non-empty row");
      continue;
    }
    if (y >= C) throw_invalid("loss: label " + std::to_string(y) + " out of range");
    const auto row = rows.row(i);
    if (row.empty() || row[0] != y) throw_invalid("loss: neighbour row must start with target");
    for (ClassId c : row) {
      if (c >= C) throw_invalid("loss: neighbour index out of range");
    }
    ++counted;
  }
  if (counted == 0 && cfg.reduction == Reduction::kMean) {
    throw Error(ErrorCode::kEmptyBatch, "loss: no non-ignored pixels, mean loss is undefined");
  }

  const EmbeddingTable centroids = effective_centroids(table, cfg);
  const Matrix x = effective_pixels(features, cfg);
  const double scale =
      cfg.reduction == Reduction::kMean ? 1.0 / static_cast<double>(counted) : 1.0;
  const double two_over_tau = 2.0 / cfg.tau;

  // Per-pixel results are written to pixel-indexed slots; the shared table
  // gradient is reduced afterwards in pixel order.
  std::vector<double> pixel_loss(n, 0.0);
  Matrix grad_x(n, d);
  std::vector<double> coef(rows.total_entries(), 0.0);
  std::vector<std::size_t> coef_offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) coef_offset[i + 1] = coef_offset[i] + rows.row(i).size();

  parallel_for(n, cfg.threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> z;
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = rows.row(i);
      if (row.empty()) continue;
      const auto xi = x.row(i);
      z.resize(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) {
        z[j] = -sq_dist(xi, centroids.row(row[j])) / cfg.tau;
      }
      const double lse = log_sum_exp(z);
      pixel_loss[i] = lse - z[0];
      auto gx = grad_x.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        // dL/dz_j = p_j - [j == 0]; dz_j/dx = -(2/tau)(x - mu_j)
        const double g = (std::exp(z[j] - lse) - (j == 0 ? 1.0 : 0.0)) * scale;
        const double c = g * two_over_tau;
        coef[coef_offset[i] + j] = c;
        const auto mu = centroids.row(row[j]);
        for (std::size_t t = 0; t < d; ++t) gx[t] -= c * (xi[t] - mu[t]);
      }
    }
  });

  LossReport report;
  report.pixels_counted = counted;
  double cls = 0.0;
  for (double v : pixel_loss) cls += v;
  report.classification_loss = cls * scale;

  Matrix grad_mu(C, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = rows.row(i);
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double c = coef[coef_offset[i] + j];
      const auto mu = centroids.row(row[j]);
      auto gm = grad_mu.row(row[j]);
      for (std::size_t t = 0; t < d; ++t) gm[t] += c * (xi[t] - mu[t]);
    }
  }
  report.grad_table = table_grad_to_rows(table, std::move(grad_mu), cfg);

  if (cfg.normalize) {
    report.grad_pixels = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      normalize_backward(features.row(i), grad_x.row(i), report.grad_pixels.row(i));
    }
  } else {
    report.grad_pixels = std::move(grad_x);
  }

  const RegularizationTerm reg = regularization_term(table, cfg);
  report.regularization_loss = reg.value;
  auto gt = report.grad_table.flat();
  const auto gr = reg.grad_table.flat();
  for (std::size_t t = 0; t < gt.size(); ++t) gt[t] += gr[t];
  report.total = report.classification_loss + report.regularization_loss;

  auto all_finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
  };
  if (!std::isfinite(report.total) || !all_finite(report.grad_pixels.flat()) ||
      !all_finite(report.grad_table.flat())) {
    throw Error(ErrorCode::kNumerical, "loss: non-finite loss or gradient");
  }
  return report;
}

NeighborIndex select_neighbors(const Matrix& features, std::span<const ClassId> labels,
                               const EmbeddingTable& table, const LossConfig& cfg) {
  validate(cfg);
  if (cfg.k > table.num_classes()) {
    throw_invalid("k=" + std::to_string(cfg.k) + " exceeds C=" +
                  std::to_string(table.num_classes()));
  }
  return knn_with_target(effective_centroids(table, cfg), effective_pixels(features, cfg), labels,
                         cfg.k, cfg.merge, cfg.threads);
}

LossReport loss_compute(const Matrix& features, std::span<const ClassId> labels,
                        const EmbeddingTable& table, const LossConfig& cfg) {
  return loss_with_neighbors(features, labels, select_neighbors(features, labels, table, cfg),
                             table, cfg);
}

}  // namespace ess
