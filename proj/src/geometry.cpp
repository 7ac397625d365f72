#include "ess/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ess/error.hpp"

namespace ess {

namespace {

void check_same_dim(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw_invalid(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                  std::to_string(b) + ")");
  }
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double sq_dist(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a.size(), b.size(), "sq_dist");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

void normalize(std::span<const double> v, std::span<double> out, double eps) {
  check_same_dim(v.size(), out.size(), "normalize");
  const double inv = 1.0 / std::max(norm(v), eps);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
}

std::vector<double> normalize(std::span<const double> v, double eps) {
  std::vector<double> out(v.size());
  normalize(v, out, eps);
  return out;
}

void normalize_backward(std::span<const double> v, std::span<const double> upstream,
                        std::span<double> out, double eps) {
  check_same_dim(v.size(), upstream.size(), "normalize_backward");
  check_same_dim(v.size(), out.size(), "normalize_backward");
  const double r = norm(v);
  if (r < eps) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const double inv = 1.0 / r;
  // radial component of the upstream gradient, measured along x = v / r
  const double radial = dot(v, upstream) * inv * inv;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (upstream[i] - v[i] * radial) * inv;
}

std::vector<double> normalize_backward(std::span<const double> v,
                                       std::span<const double> upstream, double eps) {
  std::vector<double> out(v.size());
  normalize_backward(v, upstream, out, eps);
  return out;
}

Matrix normalize_rows(const Matrix& m, double eps) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) normalize(m.row(r), out.row(r), eps);
  return out;
}

}  // namespace ess
