#include "ess/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "ess/error.hpp"
#include "ess/loss.hpp"

using namespace ess;

namespace {

// Nearest-prototype accuracy written out independently of bayes_accuracy.
double nearest_prototype_accuracy(const Dataset& d) {
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] == kIgnoreLabel) continue;
    std::vector<std::pair<double, std::size_t>> dist;
    for (std::size_t c = 0; c < d.num_classes; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < d.feature_dim; ++t) {
        const double diff = double(d.features[i * d.feature_dim + t]) - double(d.prototypes[c * d.feature_dim + t]);
        s += diff * diff;
      }
      dist.emplace_back(s, c);
    }
    ++n;
    hit += std::min_element(dist.begin(), dist.end())->second == d.labels[i];
  }
  return double(hit) / double(n);
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("noiseless data sits exactly on the prototypes") {
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.sigma = 0.0;
  spec.seed = 4;
  const auto d = gen_synthetic(spec);
  CHECK(d.size() == spec.pixels_per_image * spec.num_images);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t t = 0; t < d.feature_dim; ++t) {
      CHECK(d.features[i * d.feature_dim + t] == d.prototypes[d.labels[i] * d.feature_dim + t]);
    }
  }
  CHECK(bayes_accuracy(d) == 1.0);
}

TEST_CASE("prototypes are unit directions") {
  SyntheticSpec spec;
  spec.num_classes = 30;
  spec.feature_dim = 9;
  const auto d = gen_synthetic(spec);
  for (std::size_t c = 0; c < 30; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < 9; ++t) s += double(d.prototypes[c * 9 + t]) * d.prototypes[c * 9 + t];
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("zipf(1.0) histogram is heavy-headed") {
  SyntheticSpec spec;
  spec.num_classes = 100;
  spec.distribution = ClassDistribution::kZipf;
  spec.zipf_exponent = 1.0;
  spec.pixels_per_image = 1000;
  spec.num_images = 100;
  spec.seed = 1;
  const auto h = class_histogram(gen_synthetic(spec));
  auto sorted = h;
  std::sort(sorted.rbegin(), sorted.rend());
  CHECK(std::is_sorted(sorted.rbegin(), sorted.rend()));
  REQUIRE(sorted.back() > 0);
  CHECK(double(sorted.front()) / double(sorted.back()) > 10.0);
}

TEST_CASE("class frequencies converge to the generating distribution") {
  for (auto dist : {ClassDistribution::kUniform, ClassDistribution::kZipf}) {
    SyntheticSpec spec;
    spec.num_classes = 20;
    spec.feature_dim = 2;
    spec.distribution = dist;
    spec.zipf_exponent = 1.3;
    spec.pixels_per_image = 2000;
    spec.num_images = 100;
    spec.seed = 17;
    const auto h = class_histogram(gen_synthetic(spec));
    const auto p = class_probabilities(spec);
    const double n = double(spec.pixels_per_image * spec.num_images);
    double chi2 = 0.0;
    for (std::size_t c = 0; c < h.size(); ++c) {
      const double e = n * p[c];
      chi2 += (double(h[c]) - e) * (double(h[c]) - e) / e;
    }
    // 19 degrees of freedom; the 0.999 quantile is 43.8
    CHECK(chi2 < 43.8);
  }
}

TEST_CASE("generation is deterministic per seed") {
  SyntheticSpec spec;
  spec.seed = 99;
  spec.ignore_fraction = 0.2;
  CHECK(encode_essd(gen_synthetic(spec)) == encode_essd(gen_synthetic(spec)));
  auto other = spec;
  other.seed = 100;
  CHECK_FALSE(encode_essd(gen_synthetic(spec)) == encode_essd(gen_synthetic(other)));
}

TEST_CASE("ignore fraction produces sentinel labels") {
  SyntheticSpec spec;
  spec.ignore_fraction = 0.195;
  spec.pixels_per_image = 1000;
  spec.num_images = 50;
  const auto d = gen_synthetic(spec);
  const auto ignored = std::count(d.labels.begin(), d.labels.end(), kIgnoreLabel);
  CHECK(double(ignored) / double(d.size()) == doctest::Approx(0.195).epsilon(0.05));
}

TEST_CASE("bayes_accuracy") {
  SyntheticSpec spec;
  spec.num_classes = 100;
  spec.feature_dim = 16;
  spec.sigma = 0.3;
  spec.seed = 3;
  const auto d = gen_synthetic(spec);
  const double acc = bayes_accuracy(d);
  CHECK(acc == nearest_prototype_accuracy(d));
  // regression constant: 10961 of 16384 pixels
  CHECK(acc == 10961.0 / 16384.0);

  // heavy noise drives accuracy toward chance from above
  auto noisy = spec;
  noisy.num_classes = 2;
  noisy.feature_dim = 1;
  noisy.sigma = 20.0;
  noisy.num_images = 200;
  const double chance = bayes_accuracy(gen_synthetic(noisy));
  CHECK(chance > 0.49);
  CHECK(chance < 0.54);

  Dataset plain = d;
  plain.prototypes.clear();
  CHECK_THROWS_AS(bayes_accuracy(plain), Error);
}

TEST_CASE("ESSD round-trip, sentinels and errors") {
  SyntheticSpec spec;
  spec.num_classes = 7;
  spec.feature_dim = 3;
  spec.pixels_per_image = 50;
  spec.num_images = 3;
  spec.ignore_fraction = 0.3;
  const auto d = gen_synthetic(spec);
  const auto bytes = encode_essd(d);
  CHECK(bytes.size() == 25 + d.size() * (3 * 4 + 4) + 7 * 3 * 4);
  const auto path = temp_file("ess_data_test.essd");
  save_dataset(d, path);
  const auto back = load_dataset(path);
  CHECK(back == d);
  CHECK(encode_essd(back) == bytes);

  Dataset plain = d;
  plain.prototypes.clear();
  const auto plain_bytes = encode_essd(plain);
  CHECK(plain_bytes[24] == 0);
  CHECK(decode_essd(plain_bytes) == plain);

  auto expect_issue = [](const io::Bytes& b, FormatIssue issue) {
    try {
      decode_essd(b);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.issue() == issue);
    }
  };
  auto bad = bytes;
  bad[1] = 'Z';
  expect_issue(bad, FormatIssue::kBadMagic);
  expect_issue(io::Bytes(bytes.begin(), bytes.begin() + 10), FormatIssue::kTruncated);
  expect_issue(io::Bytes(bytes.begin(), bytes.end() - 5), FormatIssue::kTruncated);
  auto huge_n = bytes;
  huge_n[15] = 0x7F;  // top byte of N
  expect_issue(huge_n, FormatIssue::kTruncated);
  auto bad_label = plain_bytes;
  const std::size_t label0 = 25 + d.size() * 3 * 4;
  bad_label[label0] = 7;
  bad_label[label0 + 1] = bad_label[label0 + 2] = bad_label[label0 + 3] = 0;
  expect_issue(bad_label, FormatIssue::kLabelOutOfRange);
  CHECK_THROWS_AS(load_dataset(temp_file("ess_missing_file.essd")), Error);
}

TEST_CASE("a file with one ignored pixel loads and the pixel drops out of the loss") {
  Dataset d;
  d.feature_dim = 2;
  d.num_classes = 3;
  d.features = {1, 0, 0, 1, -1, 0};
  d.labels = {0, kIgnoreLabel, 2};
  const auto back = decode_essd(encode_essd(d));
  CHECK(back.labels[1] == kIgnoreLabel);
  Matrix eye(3, 2);
  eye(0, 0) = 1;
  eye(1, 1) = 1;
  eye(2, 0) = -1;
  LossConfig cfg;
  cfg.k = 2;
  const auto r = loss_compute(back.all_features(), back.labels, EmbeddingTable(eye), cfg);
  CHECK(r.pixels_counted == 2);
  CHECK(r.grad_pixels(1, 0) == 0.0);
  CHECK(r.grad_pixels(1, 1) == 0.0);
}
