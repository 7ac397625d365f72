#pragma once

#include <span>
#include <vector>

#include "ess/matrix.hpp"

namespace ess {

inline constexpr double kNormEps = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);

/// Squared L2 distance. For unit vectors this equals 2 - 2<a, b> and lies in
/// [0, 4]. Throws on dimension mismatch.
double sq_dist(std::span<const double> a, std::span<const double> b);

/// v / max(||v||, eps). Writes into `out` (may alias `v`).
void normalize(std::span<const double> v, std::span<double> out, double eps = kNormEps);
std::vector<double> normalize(std::span<const double> v, double eps = kNormEps);

/// Vector-Jacobian product of normalize() at v: (g - x<x, g>) / ||v||.
/// Returns zero when ||v|| < eps, where the clamped map is not differentiable
/// in a useful way.
void normalize_backward(std::span<const double> v, std::span<const double> upstream,
                        std::span<double> out, double eps = kNormEps);
std::vector<double> normalize_backward(std::span<const double> v,
                                       std::span<const double> upstream,
                                       double eps = kNormEps);

/// Row-wise normalization of a matrix.
Matrix normalize_rows(const Matrix& m, double eps = kNormEps);

}  // namespace ess
