#include "ess/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ess/error.hpp"
#include "ess/geometry.hpp"
#include "oracles.hpp"

using namespace ess;

namespace {

// C unit centroids all at the same distance from x = e0 (d = C + 1).
struct Equidistant {
  EmbeddingTable table;
  Matrix x;
};

Equidistant equidistant(std::size_t C, double angle) {
  Matrix rows(C, C + 1);
  for (std::size_t n = 0; n < C; ++n) {
    rows(n, 0) = std::cos(angle);
    rows(n, n + 1) = std::sin(angle);
  }
  Matrix x(1, C + 1);
  x(0, 0) = 1.0;
  return {EmbeddingTable(rows), x};
}

std::vector<std::vector<ClassId>> to_rows(const NeighborIndex& idx) {
  std::vector<std::vector<ClassId>> out;
  for (std::size_t i = 0; i < idx.size(); ++i) out.emplace_back(idx.row(i).begin(), idx.row(i).end());
  return out;
}

LabelBatch random_labels(std::size_t n, std::size_t C, std::mt19937_64& rng) {
  std::uniform_int_distribution<ClassId> pick(0, static_cast<ClassId>(C - 1));
  LabelBatch y(n);
  for (auto& v : y) v = pick(rng);
  return y;
}

}  // namespace

TEST_CASE("softmax is stable at the working temperature") {
  const std::vector<double> z{-80.0, -0.0, -79.9};
  const auto p = softmax(z);
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> big{1000.0, 999.0};
  const auto q = softmax(big);
  CHECK(std::isfinite(q[0]));
  CHECK(q[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("exact_posterior examples") {
  Matrix mu(2, 1);
  mu(0, 0) = 1.0;
  mu(1, 0) = -1.0;
  const std::vector<double> x{1.0};
  const auto p = exact_posterior(x, EmbeddingTable(mu), 1.0);
  CHECK(p[0] == doctest::Approx(0.98201379).epsilon(1e-8));
  CHECK(p[1] == doctest::Approx(0.01798621).epsilon(1e-7));

  const auto eq = equidistant(7, 0.9);
  for (double v : exact_posterior(eq.x.row(0), eq.table, 0.05)) {
    CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  }

  // unique nearest with a squared-distance margin >= 0.1 at tau = 1e-3
  std::mt19937_64 rng(6);
  int checked = 0;
  for (int trial = 0; trial < 500 && checked < 50; ++trial) {
    const EmbeddingTable t(oracle::unit_rows(10, 4, rng));
    const Matrix q = oracle::unit_rows(1, 4, rng);
    std::vector<double> d;
    for (std::size_t c = 0; c < 10; ++c) d.push_back(sq_dist(q.row(0), t.row(c)));
    auto sorted = d;
    std::sort(sorted.begin(), sorted.end());
    if (sorted[1] - sorted[0] < 0.1) continue;
    ++checked;
    const auto post = exact_posterior(q.row(0), t, 1e-3);
    CHECK(*std::max_element(post.begin(), post.end()) >= 1.0 - 1e-9);
  }
  CHECK(checked == 50);
}

TEST_CASE("exact_posterior sums to one") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const EmbeddingTable t(oracle::unit_rows(2 + trial % 40, 8, rng));
    const Matrix q = oracle::unit_rows(1, 8, rng);
    const auto p = exact_posterior(q.row(0), t, trial % 2 ? 0.05 : 1.0);
    double s = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("approx_posterior with the full class set equals the exact posterior") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 3 + trial % 20;
    const EmbeddingTable t(oracle::unit_rows(C, 6, rng));
    const Matrix q = oracle::unit_rows(1, 6, rng);
    const LabelBatch y = random_labels(1, C, rng);
    const auto rows = knn_with_target(t, q, y, C);
    const double approx = approx_posterior(q.row(0), t, 0.05, rows.row(0));
    CHECK(std::abs(approx - exact_posterior(q.row(0), t, 0.05)[y[0]]) <= 1e-12);
  }
}

TEST_CASE("equidistant centroids realize the 1/k - 1/C error") {
  const auto eq = equidistant(10, 1.1);
  const auto rows = knn_with_target(eq.table, eq.x, LabelBatch{0}, 4);
  REQUIRE(rows.row(0).size() == 4);
  const double approx = approx_posterior(eq.x.row(0), eq.table, 0.05, rows.row(0));
  const double exact = exact_posterior(eq.x.row(0), eq.table, 0.05)[0];
  CHECK(std::abs(approx - 0.25) <= 1e-12);
  CHECK(std::abs(exact - 0.10) <= 1e-12);
  CHECK(std::abs((approx - exact) - 0.15) <= 1e-9);

  for (std::size_t C : {5u, 12u, 40u}) {
    for (std::size_t k = 1; k <= C; k += 3) {
      const auto e = equidistant(C, 0.7);
      const auto r = knn_with_target(e.table, e.x, LabelBatch{0}, k);
      const double err = approx_posterior(e.x.row(0), e.table, 0.2, r.row(0)) -
                         exact_posterior(e.x.row(0), e.table, 0.2)[0];
      CHECK(err == doctest::Approx(1.0 / k - 1.0 / C).epsilon(1e-9));
    }
  }
}

TEST_CASE("approximation error exceeds 1/k - 1/C off the equidistant configuration") {
  // Target nearest, the other C-1 centroids tied at relative weight s =
  // exp(-(D - D_t) / tau). The error (C-k)s / ((1+(k-1)s)(1+(C-1)s)) peaks at
  // s = 1/sqrt((k-1)(C-1)), where it equals (C-k) / (sqrt(k-1)+sqrt(C-1))^2.
  const std::size_t C = 10, k = 4;
  const double tau = 0.05;
  const double s = 1.0 / std::sqrt(double((k - 1) * (C - 1)));
  const double gap = -tau * std::log(s);  // squared-distance gap to the others
  // target at squared distance D_t, others at D_t + gap, all unit vectors
  const double d_target = 0.5;
  const double d_other = d_target + gap;
  Matrix rows(C, C + 1);
  for (std::size_t n = 0; n < C; ++n) {
    const double cosang = 1.0 - (n == 0 ? d_target : d_other) / 2.0;
    rows(n, 0) = cosang;
    rows(n, n + 1) = std::sqrt(1.0 - cosang * cosang);
  }
  const EmbeddingTable t(rows);
  Matrix x(1, C + 1);
  x(0, 0) = 1.0;
  const auto r = knn_with_target(t, x, LabelBatch{0}, k);
  REQUIRE(r.row(0).size() == k);
  const double err = approx_posterior(x.row(0), t, tau, r.row(0)) - exact_posterior(x.row(0), t, tau)[0];
  const double peak = double(C - k) / std::pow(std::sqrt(double(k - 1)) + std::sqrt(double(C - 1)), 2);
  CHECK(err == doctest::Approx(peak).epsilon(1e-9));
  CHECK(err > 1.0 / k - 1.0 / C);
}

TEST_CASE("monotone refinement: shrinking the normalization set never lowers the target probability") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t C = 4 + trial % 30;
    const EmbeddingTable t(oracle::unit_rows(C, 5, rng));
    const Matrix q = oracle::unit_rows(1, 5, rng);
    const LabelBatch y = random_labels(1, C, rng);
    const double tau = trial % 3 == 0 ? 1.0 : 0.05;
    const double exact = exact_posterior(q.row(0), t, tau)[y[0]];
    double prev = 1.0 + 1e-15;
    for (std::size_t k = 1; k <= C; ++k) {
      const auto r = knn_with_target(t, q, y, k);
      const double p = approx_posterior(q.row(0), t, tau, r.row(0));
      CHECK(p <= prev + 1e-15);
      CHECK(p >= exact - 1e-15);
      prev = p;
    }
  }
}

TEST_CASE("argmax of the exact posterior does not depend on tau") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const EmbeddingTable t(oracle::unit_rows(25, 6, rng));
    const Matrix q = oracle::unit_rows(1, 6, rng);
    auto argmax = [&](double tau) {
      const auto p = exact_posterior(q.row(0), t, tau);
      return std::max_element(p.begin(), p.end()) - p.begin();
    };
    CHECK(argmax(0.05) == argmax(1.0));
    CHECK(argmax(0.05) == argmax(7.0));
  }
}

TEST_CASE("gradient_of_logits") {
  const std::vector<double> onehot{0, 1, 0};
  for (double g : gradient_of_logits(onehot, 1)) CHECK(g == 0.0);
  const std::vector<double> half{0.5, 0.5};
  CHECK(gradient_of_logits(half, 0) == std::vector<double>{-0.5, 0.5});
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(6);
    for (double& v : z) v = u(rng);
    const auto g = gradient_of_logits(softmax(z), trial % 6);
    CHECK(std::abs(std::accumulate(g.begin(), g.end(), 0.0)) <= 1e-12);
  }
  CHECK_THROWS_AS(gradient_of_logits(half, 2), Error);
}

TEST_CASE("loss saturates when every pixel sits on its centroid") {
  Matrix eye(5, 5);
  for (int i = 0; i < 5; ++i) eye(i, i) = 1.0;
  const EmbeddingTable t(eye);
  Matrix x(5, 5);
  LabelBatch y(5);
  for (int i = 0; i < 5; ++i) {
    x(i, (i + 2) % 5) = 1.0;
    y[i] = (i + 2) % 5;
  }
  LossConfig cfg;
  cfg.k = 3;
  cfg.use_margin = false;
  const auto r = loss_compute(x, y, t, cfg);
  CHECK(r.classification_loss <= 1e-10);
  CHECK(r.pixels_counted == 5);
}

TEST_CASE("k = C-1 reproduces full-softmax cross-entropy") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t C = 3 + trial % 20, d = 2 + trial % 7, n = 16;
    const EmbeddingTable t(oracle::unit_rows(C, d, rng));
    const Matrix f = oracle::gaussian(n, d, rng);
    const LabelBatch y = random_labels(n, C, rng);
    LossConfig cfg;
    cfg.k = C - 1;
    cfg.use_margin = false;
    // target first, then every non-target class
    NeighborIndex rows(C - 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<ClassId> row{y[i]};
      for (ClassId c = 0; c < C; ++c) {
        if (c != y[i]) row.push_back(c);
      }
      rows.push_row(row);
    }
    const auto r = loss_with_neighbors(f, y, rows, t, cfg);
    const Matrix x = normalize_rows(f);
    double ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) ce -= std::log(exact_posterior(x.row(i), t, cfg.tau)[y[i]]);
    CHECK(std::abs(r.classification_loss - ce / n) <= 1e-12);
  }
}

TEST_CASE("loss_compute matches the straight-line reimplementation") {
  std::mt19937_64 rng(7);
  const EmbeddingTable t(oracle::unit_rows(32, 8, rng));
  const Matrix f = oracle::gaussian(64, 8, rng);
  const LabelBatch y = random_labels(64, 32, rng);
  LossConfig cfg;
  cfg.k = 5;
  cfg.tau = 0.05;
  cfg.margin.margin = 0.2;
  const auto r = loss_compute(f, y, t, cfg);
  // independent gather: brute kNN on normalized pixels, union with target
  const auto nn = oracle::brute_knn(t.rows(), normalize_rows(f), 5);
  std::vector<std::vector<ClassId>> rows;
  for (std::size_t i = 0; i < 64; ++i) {
    std::vector<ClassId> row{y[i]};
    for (ClassId c : nn[i]) if (c != y[i]) row.push_back(c);
    rows.push_back(row);
  }
  const double want = oracle::straight_line_loss(f, t.rows(), rows, 0.05, 0.2, true, true);
  CHECK(std::abs(r.total - want) <= 1e-10);
  CHECK(r.total == doctest::Approx(r.classification_loss + r.regularization_loss).epsilon(1e-15));

  // margin active on a crowded table as well
  Matrix crowd = oracle::unit_rows(12, 3, rng);
  for (std::size_t c = 0; c < 12; ++c) crowd(c, 0) += 4.0;
  EmbeddingTable tc(crowd);
  tc.renormalize();
  const Matrix f2 = oracle::gaussian(20, 3, rng);
  const LabelBatch y2 = random_labels(20, 12, rng);
  cfg.k = 4;
  const auto r2 = loss_compute(f2, y2, tc, cfg);
  CHECK(r2.regularization_loss > 0.0);
  const auto rows2 = to_rows(select_neighbors(f2, y2, tc, cfg));
  CHECK(std::abs(r2.total - oracle::straight_line_loss(f2, tc.rows(), rows2, 0.05, 0.2, true, true)) <= 1e-10);
}

TEST_CASE("ignore-labelled pixels change nothing") {
  std::mt19937_64 rng(24);
  const EmbeddingTable t(oracle::unit_rows(10, 4, rng));
  const Matrix f = oracle::gaussian(12, 4, rng);
  const LabelBatch y = random_labels(12, 10, rng);
  LossConfig cfg;
  cfg.k = 3;
  const auto base = loss_compute(f, y, t, cfg);

  Matrix f_more(20, 4);
  LabelBatch y_more;
  std::size_t src = 0;
  const Matrix junk = oracle::gaussian(8, 4, rng);
  for (std::size_t i = 0; i < 20; ++i) {
    const bool ignored = i % 5 == 1 || i % 5 == 3;
    for (std::size_t c = 0; c < 4; ++c) f_more(i, c) = ignored ? junk((i / 5) * 2 + (i % 5 == 3), c) : f(src, c);
    y_more.push_back(ignored ? kIgnoreLabel : y[src]);
    if (!ignored) ++src;
  }
  REQUIRE(src == 12);
  const auto more = loss_compute(f_more, y_more, t, cfg);
  CHECK(more.total == base.total);
  CHECK(more.classification_loss == base.classification_loss);
  CHECK(more.pixels_counted == base.pixels_counted);
  CHECK(more.grad_table == base.grad_table);
  for (std::size_t i = 0, j = 0; i < 20; ++i) {
    if (y_more[i] == kIgnoreLabel) {
      for (double g : more.grad_pixels.row(i)) CHECK(g == 0.0);
    } else {
      for (std::size_t c = 0; c < 4; ++c) CHECK(more.grad_pixels(i, c) == base.grad_pixels(j, c));
      ++j;
    }
  }
}

TEST_CASE("all-ignored batch is reported as an empty batch") {
  const auto t = init_table(4, 3, 0);
  const Matrix f(3, 3, 1.0);
  const LabelBatch y(3, kIgnoreLabel);
  LossConfig cfg;
  cfg.k = 2;
  try {
    loss_compute(f, y, t, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyBatch);
  }
  cfg.reduction = Reduction::kSum;
  CHECK(loss_compute(f, y, t, cfg).classification_loss == 0.0);
}

TEST_CASE("sum reduction scales the mean") {
  std::mt19937_64 rng(25);
  const EmbeddingTable t(oracle::unit_rows(8, 4, rng));
  const Matrix f = oracle::gaussian(10, 4, rng);
  const LabelBatch y = random_labels(10, 8, rng);
  LossConfig cfg;
  cfg.k = 3;
  cfg.use_margin = false;
  const auto mean = loss_compute(f, y, t, cfg);
  cfg.reduction = Reduction::kSum;
  const auto sum = loss_compute(f, y, t, cfg);
  CHECK(sum.classification_loss == doctest::Approx(10.0 * mean.classification_loss).epsilon(1e-13));
}

TEST_CASE("concatenation double-counts a target that is also a neighbour") {
  Matrix eye(4, 4);
  for (int i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const EmbeddingTable t(eye);
  Matrix x(1, 4);
  x(0, 1) = 1.0;
  LossConfig cfg;
  cfg.k = 2;
  cfg.tau = 1.0;
  cfg.use_margin = false;
  const double dedup = loss_compute(x, LabelBatch{1}, t, cfg).classification_loss;
  cfg.merge = TargetMerge::kConcatenate;
  const double concat = loss_compute(x, LabelBatch{1}, t, cfg).classification_loss;
  // dedup: {1, 0}: logits (0, -2); concat: {1, 1, 0}
  CHECK(dedup == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-14));
  CHECK(concat == doctest::Approx(std::log(2.0 + std::exp(-2.0))).epsilon(1e-14));
}

TEST_CASE("parallel loss is identical to the single-threaded result") {
  std::mt19937_64 rng(26);
  const EmbeddingTable t(oracle::unit_rows(40, 6, rng));
  const Matrix f = oracle::gaussian(300, 6, rng);
  const LabelBatch y = random_labels(300, 40, rng);
  LossConfig cfg;
  cfg.k = 6;
  const auto one = loss_compute(f, y, t, cfg);
  cfg.threads = 5;
  const auto many = loss_compute(f, y, t, cfg);
  CHECK(one.total == many.total);
  CHECK(one.grad_pixels == many.grad_pixels);
  CHECK(one.grad_table == many.grad_table);
}

TEST_CASE("invalid configurations") {
  const auto t = init_table(4, 3, 0);
  const Matrix f(2, 3, 1.0);
  LossConfig cfg;
  cfg.k = 5;
  CHECK_THROWS_AS(loss_compute(f, LabelBatch{0, 1}, t, cfg), Error);
  cfg.k = 2;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(loss_compute(f, LabelBatch{0, 1}, t, cfg), Error);
  cfg.tau = 0.05;
  CHECK_THROWS_AS(loss_compute(f, LabelBatch{0, 4}, t, cfg), Error);
  CHECK_THROWS_AS(loss_compute(Matrix(2, 4), LabelBatch{0, 1}, t, cfg), Error);
}
