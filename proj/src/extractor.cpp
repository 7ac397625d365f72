#include "ess/extractor.hpp"

#include <cmath>
#include <random>

#include "ess/error.hpp"

namespace ess {

const char* to_string(ExtractorKind kind) noexcept {
  switch (kind) {
    case ExtractorKind::kIdentity: return "identity";
    case ExtractorKind::kLinear: return "linear";
    case ExtractorKind::kMlp: return "mlp";
  }
  return "unknown";
}

ExtractorKind parse_extractor_kind(const std::string& name) {
  if (name == "identity") return ExtractorKind::kIdentity;
  if (name == "linear") return ExtractorKind::kLinear;
  if (name == "mlp") return ExtractorKind::kMlp;
  throw Error(ErrorCode::kConfig, "unknown extractor '" + name + "'");
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

// out = x * W^T + b, W is (out x in)
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    auto oi = out.row(i);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      const auto wr = w.row(r);
      double s = b(0, r);
      for (std::size_t c = 0; c < xi.size(); ++c) s += wr[c] * xi[c];
      oi[r] = s;
    }
  }
  return out;
}

// Accumulates dW = g^T x, db = colsum(g), and optionally dx = g W.
void affine_backward(const Matrix& x, const Matrix& w, const Matrix& g, Matrix& dw, Matrix& db,
                     Matrix* dx) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xi = x.row(i);
    const auto gi = g.row(i);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      auto dwr = dw.row(r);
      for (std::size_t c = 0; c < xi.size(); ++c) dwr[c] += gi[r] * xi[c];
      db(0, r) += gi[r];
    }
  }
  if (dx) {
    *dx = Matrix(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto gi = g.row(i);
      auto di = dx->row(i);
      for (std::size_t r = 0; r < w.rows(); ++r) {
        const auto wr = w.row(r);
        for (std::size_t c = 0; c < di.size(); ++c) di[c] += gi[r] * wr[c];
      }
    }
  }
}

}  // namespace

FeatureExtractor FeatureExtractor::make(ExtractorKind kind, std::size_t in_dim,
                                        std::size_t out_dim, std::size_t hidden_dim,
                                        std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 1) throw_invalid("extractor dimensions must be positive");
  FeatureExtractor fx;
  fx.kind_ = kind;
  fx.in_dim_ = in_dim;
  fx.out_dim_ = out_dim;
  std::mt19937_64 rng(seed);
  switch (kind) {
    case ExtractorKind::kIdentity:
      if (in_dim != out_dim) {
        throw Error(ErrorCode::kConfig, "identity extractor needs feature_dim == embedding dim");
      }
      break;
    case ExtractorKind::kLinear:
      fx.params_.push_back(gaussian(out_dim, in_dim, 1.0 / std::sqrt(double(in_dim)), rng));
      fx.params_.emplace_back(1, out_dim);
      break;
    case ExtractorKind::kMlp:
      if (hidden_dim < 1) throw_invalid("mlp extractor needs hidden_dim >= 1");
      fx.hidden_dim_ = hidden_dim;
      fx.params_.push_back(gaussian(hidden_dim, in_dim, 1.0 / std::sqrt(double(in_dim)), rng));
      fx.params_.emplace_back(1, hidden_dim);
      fx.params_.push_back(
          gaussian(out_dim, hidden_dim, 1.0 / std::sqrt(double(hidden_dim)), rng));
      fx.params_.emplace_back(1, out_dim);
      break;
  }
  return fx;
}

Matrix FeatureExtractor::forward(const Matrix& x, Activations* acts) const {
  if (x.rows() > 0 && x.cols() != in_dim_) {
    throw_invalid("extractor: input has " + std::to_string(x.cols()) + " columns, expected " +
                  std::to_string(in_dim_));
  }
  switch (kind_) {
    case ExtractorKind::kIdentity:
      return x;
    case ExtractorKind::kLinear:
      return affine(x, params_[0], params_[1]);
    case ExtractorKind::kMlp: {
      Matrix h = affine(x, params_[0], params_[1]);
      for (double& v : h.flat()) v = std::tanh(v);
      Matrix out = affine(h, params_[2], params_[3]);
      if (acts) acts->hidden = std::move(h);
      return out;
    }
  }
  return x;
}

std::vector<Matrix> FeatureExtractor::backward(const Matrix& x, const Activations& acts,
                                               const Matrix& grad_out, Matrix* grad_in) const {
  std::vector<Matrix> grads;
  for (const Matrix& p : params_) grads.emplace_back(p.rows(), p.cols());
  switch (kind_) {
    case ExtractorKind::kIdentity:
      if (grad_in) *grad_in = grad_out;
      break;
    case ExtractorKind::kLinear:
      affine_backward(x, params_[0], grad_out, grads[0], grads[1], grad_in);
      break;
    case ExtractorKind::kMlp: {
      Matrix grad_h;
      affine_backward(acts.hidden, params_[2], grad_out, grads[2], grads[3], &grad_h);
      auto gh = grad_h.flat();
      const auto h = acts.hidden.flat();
      for (std::size_t t = 0; t < gh.size(); ++t) gh[t] *= 1.0 - h[t] * h[t];
      affine_backward(x, params_[0], grad_h, grads[0], grads[1], grad_in);
      break;
    }
  }
  return grads;
}

}  // namespace ess
