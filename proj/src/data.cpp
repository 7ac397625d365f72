#include "ess/data.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "ess/error.hpp"

namespace ess {

void validate(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw_invalid("synthetic: need at least 2 classes");
  if (spec.feature_dim < 1) throw_invalid("synthetic: feature_dim must be >= 1");
  if (spec.pixels_per_image < 1 || spec.num_images < 1) {
    throw_invalid("synthetic: pixel and image counts must be positive");
  }
  if (!(spec.sigma >= 0.0)) throw_invalid("synthetic: sigma must be >= 0");
  if (spec.distribution == ClassDistribution::kZipf && !(spec.zipf_exponent > 0.0)) {
    throw_invalid("synthetic: zipf exponent must be > 0");
  }
  if (!(spec.ignore_fraction >= 0.0 && spec.ignore_fraction < 1.0)) {
    throw_invalid("synthetic: ignore_fraction must lie in [0, 1)");
  }
}

std::vector<double> class_probabilities(const SyntheticSpec& spec) {
  std::vector<double> p(spec.num_classes, 1.0);
  if (spec.distribution == ClassDistribution::kZipf) {
    for (std::size_t c = 0; c < p.size(); ++c) {
      p[c] = std::pow(static_cast<double>(c + 1), -spec.zipf_exponent);
    }
  }
  double total = 0.0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
  return p;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t C = spec.num_classes;
  const std::size_t F = spec.feature_dim;
  const std::size_t N = spec.pixels_per_image * spec.num_images;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset out;
  out.feature_dim = F;
  out.num_classes = C;
  out.prototypes.resize(C * F);
  std::vector<double> proto(F);
  for (std::size_t c = 0; c < C; ++c) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (double& v : proto) {
        v = gauss(rng);
        sq += v * v;
      }
    } while (sq == 0.0);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t t = 0; t < F; ++t) {
      out.prototypes[c * F + t] = static_cast<float>(proto[t] * inv);
    }
  }

  const auto probs = class_probabilities(spec);
  std::discrete_distribution<std::size_t> pick_class(probs.begin(), probs.end());
  std::bernoulli_distribution drop_label(spec.ignore_fraction);

  out.features.resize(N * F);
  out.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t c = pick_class(rng);
    for (std::size_t t = 0; t < F; ++t) {
      const double noise = spec.sigma > 0.0 ? spec.sigma * gauss(rng) : 0.0;
      out.features[i * F + t] = static_cast<float>(out.prototypes[c * F + t] + noise);
    }
    const bool ignored = spec.ignore_fraction > 0.0 && drop_label(rng);
    out.labels[i] = ignored ? kIgnoreLabel : static_cast<ClassId>(c);
  }
  return out;
}

Matrix Dataset::gather(std::span<const std::size_t> indices) const {
  Matrix m(indices.size(), feature_dim);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = feature_row(indices[r]);
    auto dst = m.row(r);
    for (std::size_t t = 0; t < feature_dim; ++t) dst[t] = static_cast<double>(src[t]);
  }
  return m;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw_invalid("slice: range out of bounds");
  Dataset out;
  out.feature_dim = feature_dim;
  out.num_classes = num_classes;
  out.features.assign(features.begin() + static_cast<std::ptrdiff_t>(begin * feature_dim),
                      features.begin() + static_cast<std::ptrdiff_t>(end * feature_dim));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.prototypes = prototypes;
  return out;
}

LabelBatch Dataset::gather_labels(std::span<const std::size_t> indices) const {
  LabelBatch out(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) out[r] = labels[indices[r]];
  return out;
}

Matrix Dataset::all_features() const {
  Matrix m(size(), feature_dim);
  auto dst = m.flat();
  for (std::size_t i = 0; i < features.size(); ++i) dst[i] = static_cast<double>(features[i]);
  return m;
}

std::vector<std::size_t> class_histogram(const Dataset& data) {
  std::vector<std::size_t> h(data.num_classes, 0);
  for (ClassId y : data.labels) {
    if (y != kIgnoreLabel) ++h.at(y);
  }
  return h;
}

double bayes_accuracy(const Dataset& data) {
  if (!data.has_prototypes()) {
    throw_invalid("bayes_accuracy: dataset has no ground-truth prototypes");
  }
  const std::size_t F = data.feature_dim;
  std::size_t hits = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ClassId y = data.labels[i];
    if (y == kIgnoreLabel) continue;
    const auto f = data.feature_row(i);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < data.num_classes; ++c) {
      double d2 = 0.0;
      for (std::size_t t = 0; t < F; ++t) {
        const double diff = static_cast<double>(f[t]) - data.prototypes[c * F + t];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        arg = c;
      }
    }
    ++counted;
    if (arg == y) ++hits;
  }
  if (counted == 0) throw Error(ErrorCode::kEmptyBatch, "bayes_accuracy: no labelled pixels");
  return static_cast<double>(hits) / static_cast<double>(counted);
}

io::Bytes encode_essd(const Dataset& data) {
  if (data.features.size() != data.size() * data.feature_dim) {
    throw_invalid("encode_essd: feature buffer does not match N x F");
  }
  io::Writer w;
  w.magic("ESSD");
  w.u32(kEssdVersion);
  w.u64(data.size());
  w.u32(static_cast<std::uint32_t>(data.feature_dim));
  w.u32(static_cast<std::uint32_t>(data.num_classes));
  w.u8(data.has_prototypes() ? kEssdHasPrototypes : 0);
  for (float v : data.features) w.f32(v);
  for (ClassId y : data.labels) w.u32(y);
  for (float v : data.prototypes) w.f32(v);
  return w.bytes();
}

Dataset decode_essd(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("ESSD");
  const auto version = r.u32("ESSD version");
  if (version != kEssdVersion) {
    throw FormatError(FormatIssue::kUnsupportedVersion,
                      "unsupported ESSD version " + std::to_string(version));
  }
  const std::uint64_t N = r.u64("ESSD pixel count");
  Dataset out;
  out.feature_dim = r.u32("ESSD feature dimension");
  out.num_classes = r.u32("ESSD class count");
  const std::uint8_t flags = r.u8("ESSD flags");
  if (out.feature_dim < 1 || out.num_classes < 1) {
    throw FormatError(FormatIssue::kBadShape, "ESSD header has a zero dimension");
  }
  // Size check up front so a corrupt N cannot trigger a huge allocation.
  const std::size_t payload = 4 * out.feature_dim + 4;
  if (N > r.remaining() / payload) {
    throw FormatError(FormatIssue::kTruncated, "truncated ESSD payload");
  }
  out.features.resize(N * out.feature_dim);
  for (float& v : out.features) v = r.f32("ESSD features");
  out.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const ClassId y = r.u32("ESSD labels");
    if (y != kIgnoreLabel && y >= out.num_classes) {
      throw FormatError(FormatIssue::kLabelOutOfRange,
                        "ESSD label " + std::to_string(y) + " at pixel " + std::to_string(i) +
                            " exceeds C=" + std::to_string(out.num_classes));
    }
    out.labels[i] = y;
  }
  if (flags & kEssdHasPrototypes) {
    out.prototypes.resize(out.num_classes * out.feature_dim);
    for (float& v : out.prototypes) v = r.f32("ESSD prototypes");
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatIssue::kBadShape, "trailing bytes after ESSD payload");
  }
  return out;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  io::write_file(path, encode_essd(data));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_essd(io::read_file(path)); }

}  // namespace ess
