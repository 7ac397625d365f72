#include "ess/embeddings.hpp"

#include <cmath>
#include <random>
#include <string>

#include "ess/error.hpp"
#include "ess/geometry.hpp"

namespace ess {

EmbeddingTable::EmbeddingTable(Matrix rows) : rows_(std::move(rows)) {
  if (rows_.rows() < 2) throw_invalid("embedding table needs at least 2 classes");
  if (rows_.cols() < 1) throw_invalid("embedding dimension must be >= 1");
}

void EmbeddingTable::renormalize() {
  for (std::size_t c = 0; c < rows_.rows(); ++c) normalize(rows_.row(c), rows_.row(c));
}

EmbeddingTable init_table(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                          bool normalize) {
  if (num_classes < 2) throw_invalid("init_table: C must be >= 2");
  if (dim < 1) throw_invalid("init_table: d must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix rows(num_classes, dim);
  for (double& v : rows.flat()) v = gauss(rng);
  EmbeddingTable table(std::move(rows));
  if (normalize) table.renormalize();
  return table;
}

std::vector<NearestClass> nearest_inter_class_distances(const EmbeddingTable& table) {
  const std::size_t C = table.num_classes();
  std::vector<NearestClass> out(C, NearestClass{INFINITY, 0});
  // Squared distances are compared so ties resolve identically to knn_search.
  std::vector<double> best_sq(C, INFINITY);
  for (std::size_t i = 0; i < C; ++i) {
    for (std::size_t j = i + 1; j < C; ++j) {
      const double d2 = sq_dist(table.row(i), table.row(j));
      if (d2 < best_sq[i]) {
        best_sq[i] = d2;
        out[i].index = static_cast<ClassId>(j);
      }
      if (d2 < best_sq[j]) {
        best_sq[j] = d2;
        out[j].index = static_cast<ClassId>(i);
      }
    }
  }
  for (std::size_t i = 0; i < C; ++i) out[i].distance = std::sqrt(best_sq[i]);
  return out;
}

MarginLoss max_margin_loss(const EmbeddingTable& table, const MarginConfig& cfg,
                           MarginGradient mode) {
  if (!(cfg.margin >= 0.0)) throw_invalid("margin must be >= 0");
  const std::size_t C = table.num_classes();
  const std::size_t d = table.dim();
  MarginLoss out{0.0, Matrix(C, d)};
  const auto nearest = nearest_inter_class_distances(table);
  const double scale = 1.0 / static_cast<double>(C);
  for (std::size_t i = 0; i < C; ++i) {
    const double gap = cfg.margin - nearest[i].distance;
    if (gap <= 0.0) continue;
    out.value += gap * scale;
    const double dist = nearest[i].distance;
    if (dist <= 0.0) continue;
    // d/d mu_i of (m - ||mu_i - mu_j||) = -(mu_i - mu_j) / ||mu_i - mu_j||
    const std::size_t j = nearest[i].index;
    const auto mi = table.row(i);
    const auto mj = table.row(j);
    auto gi = out.grad.row(i);
    auto gj = out.grad.row(j);
    for (std::size_t t = 0; t < d; ++t) {
      const double g = scale * (mi[t] - mj[t]) / dist;
      gi[t] -= g;
      if (mode == MarginGradient::kSymmetric) gj[t] += g;
    }
  }
  return out;
}

io::Bytes encode_esse(const EmbeddingTable& table) {
  io::Writer w;
  w.magic("ESSE");
  w.u32(kEsseVersion);
  w.u32(static_cast<std::uint32_t>(table.num_classes()));
  w.u32(static_cast<std::uint32_t>(table.dim()));
  for (double v : table.rows().flat()) w.f32(static_cast<float>(v));
  return w.bytes();
}

EmbeddingTable decode_esse(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("ESSE");
  const auto version = r.u32("ESSE version");
  if (version != kEsseVersion) {
    throw FormatError(FormatIssue::kUnsupportedVersion,
                      "unsupported ESSE version " + std::to_string(version));
  }
  const auto C = r.u32("ESSE class count");
  const auto d = r.u32("ESSE dimension");
  if (C < 2 || d < 1) {
    throw FormatError(FormatIssue::kBadShape, "ESSE shape " + std::to_string(C) + "x" +
                                                  std::to_string(d) + " is not a valid table");
  }
  if (r.remaining() < std::size_t{C} * d * 4) {
    throw FormatError(FormatIssue::kTruncated, "truncated ESSE payload");
  }
  Matrix rows(C, d);
  for (double& v : rows.flat()) v = static_cast<double>(r.f32("ESSE payload"));
  if (r.remaining() != 0) {
    throw FormatError(FormatIssue::kBadShape, "trailing bytes after ESSE payload");
  }
  return EmbeddingTable(std::move(rows));
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  io::write_file(path, encode_esse(table));
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  return decode_esse(io::read_file(path));
}

}  // namespace ess
