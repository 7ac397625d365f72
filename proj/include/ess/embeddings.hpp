#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ess/binary_io.hpp"
#include "ess/matrix.hpp"
#include "ess/types.hpp"

namespace ess {

/// The learned class centroids, one row per class. Whether rows are kept on
/// the unit sphere is a training policy (see TableUpdate in loss.hpp); the
/// table itself only enforces its shape.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  /// Throws when rows.rows() < 2 or rows.cols() < 1.
  explicit EmbeddingTable(Matrix rows);

  std::size_t num_classes() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }

  std::span<const double> row(std::size_t c) const { return rows_.row(c); }
  std::span<double> row(std::size_t c) { return rows_.row(c); }

  const Matrix& rows() const noexcept { return rows_; }
  Matrix& rows() noexcept { return rows_; }

  /// Projects every row back onto the unit sphere.
  void renormalize();

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  Matrix rows_;
};

struct MarginConfig {
  double margin = 0.2;
};

/// Which rows receive the hinge gradient for an active pair (i, argmin_j).
enum class MarginGradient {
  kSymmetric,  // both i and its nearest neighbour j move (true gradient of L_r)
  kOneSided,   // only row i moves
};

/// Rows drawn i.i.d. standard normal from a seeded generator, then normalized
/// when `normalize` is set. Throws for C < 2 or d < 1.
EmbeddingTable init_table(std::size_t num_classes, std::size_t dim, std::uint64_t seed,
                          bool normalize = true);

struct NearestClass {
  double distance;  // L2 (not squared)
  ClassId index;
};

/// For every class, the nearest other class by L2 distance. Ties go to the
/// lowest index.
std::vector<NearestClass> nearest_inter_class_distances(const EmbeddingTable& table);

struct MarginLoss {
  double value = 0.0;
  Matrix grad;  // C x d, gradient of value w.r.t. the rows it was evaluated on
};

/// L_r = (1/C) sum_i max(0, m - d_i), d_i the nearest inter-class distance.
/// The argmin pairing is held fixed for the gradient. Coincident rows
/// (d_i == 0) contribute to the loss but get a zero subgradient.
MarginLoss max_margin_loss(const EmbeddingTable& table, const MarginConfig& cfg,
                           MarginGradient mode = MarginGradient::kSymmetric);

// ESSE: "ESSE", u32 version=1, u32 C, u32 d, C*d little-endian f32 row-major.
inline constexpr std::uint32_t kEsseVersion = 1;

io::Bytes encode_esse(const EmbeddingTable& table);
EmbeddingTable decode_esse(std::span<const std::uint8_t> bytes);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

}  // namespace ess
