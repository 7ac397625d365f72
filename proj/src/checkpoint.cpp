#include "ess/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "ess/config.hpp"
#include "ess/error.hpp"

namespace ess {

using nlohmann::json;

io::Bytes encode_essw(const FeatureExtractor& fx) {
  io::Writer w;
  w.magic("ESSW");
  w.u32(kEsswVersion);
  w.u32(static_cast<std::uint32_t>(fx.kind()));
  w.u32(static_cast<std::uint32_t>(fx.in_dim()));
  w.u32(static_cast<std::uint32_t>(fx.hidden_dim()));
  w.u32(static_cast<std::uint32_t>(fx.out_dim()));
  w.u32(static_cast<std::uint32_t>(fx.params().size()));
  for (const Matrix& p : fx.params()) {
    w.u32(static_cast<std::uint32_t>(p.rows()));
    w.u32(static_cast<std::uint32_t>(p.cols()));
    for (double v : p.flat()) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

FeatureExtractor decode_essw(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes);
  r.expect_magic("ESSW");
  if (r.u32("ESSW version") != kEsswVersion) {
    throw FormatError(FormatIssue::kUnsupportedVersion, "unsupported ESSW version");
  }
  const auto kind_raw = r.u32("ESSW kind");
  if (kind_raw > static_cast<std::uint32_t>(ExtractorKind::kMlp)) {
    throw FormatError(FormatIssue::kBadShape, "ESSW: unknown extractor kind");
  }
  const auto kind = static_cast<ExtractorKind>(kind_raw);
  const auto in = r.u32("ESSW in_dim");
  const auto hidden = r.u32("ESSW hidden_dim");
  const auto out = r.u32("ESSW out_dim");
  FeatureExtractor fx;
  try {
    fx = FeatureExtractor::make(kind, in, out, hidden, 0);
  } catch (const Error& e) {
    throw FormatError(FormatIssue::kBadShape, std::string("ESSW: ") + e.what());
  }
  const auto count = r.u32("ESSW tensor count");
  if (count != fx.params().size()) {
    throw FormatError(FormatIssue::kBadShape, "ESSW: tensor count does not match extractor");
  }
  for (Matrix& p : fx.params()) {
    const auto rows = r.u32("ESSW tensor rows");
    const auto cols = r.u32("ESSW tensor cols");
    if (rows != p.rows() || cols != p.cols()) {
      throw FormatError(FormatIssue::kBadShape, "ESSW: tensor shape does not match extractor");
    }
    for (double& v : p.flat()) v = static_cast<double>(r.f32("ESSW tensor data"));
  }
  if (r.remaining() != 0) throw FormatError(FormatIssue::kBadShape, "trailing bytes after ESSW");
  return fx;
}

CheckpointPaths::CheckpointPaths(const std::filesystem::path& dir)
    : metadata(dir / "checkpoint.json"),
      extractor(dir / "extractor.essw"),
      embeddings(dir / "embeddings.esse"),
      loss_csv(dir / "loss.csv") {}

void write_loss_csv(const std::filesystem::path& path, std::span<const IterRecord> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << "iter,lr_main,lr_embed,cls_loss,reg_loss\n";
  char line[160];
  for (const IterRecord& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.iter, r.lr_main,
                  r.lr_embed, r.cls_loss, r.reg_loss);
    out << line;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg,
                     const TrainResult& result, std::size_t feature_dim,
                     std::size_t num_classes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + dir.string() + "': " + ec.message());
  const CheckpointPaths paths(dir);

  json epochs = json::array();
  for (const EpochRecord& e : result.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"iter", e.iter},
                      {"mean_cls_loss", e.mean_cls_loss},
                      {"metrics", to_json(e.metrics)}});
  }
  json probes = json::array();
  for (const ProbeRecord& p : result.probes) {
    probes.push_back(
        {{"iter", p.iter}, {"exact_loss", p.exact_loss}, {"pixel_accuracy", p.pixel_accuracy}});
  }
  const json meta = {{"format", "ess-checkpoint"},
                     {"version", 1},
                     {"config", to_json(cfg)},
                     {"iter", result.state.iter},
                     {"seed", cfg.seed},
                     {"feature_dim", feature_dim},
                     {"num_classes", num_classes},
                     {"epochs", epochs},
                     {"probes", probes}};
  save_json(meta, paths.metadata);
  io::write_file(paths.extractor, encode_essw(result.model.extractor));
  save_embeddings(result.model.table, paths.embeddings);
  write_loss_csv(paths.loss_csv, result.history);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  const CheckpointPaths paths(dir);
  std::ifstream in(paths.metadata);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + paths.metadata.string() + "'");
  LoadedCheckpoint out;
  try {
    in >> out.metadata;
  } catch (const json::exception& e) {
    throw FormatError(FormatIssue::kBadShape, "checkpoint metadata is not valid JSON");
  }
  if (!out.metadata.is_object() || out.metadata.value("format", "") != "ess-checkpoint" ||
      !out.metadata.contains("config")) {
    throw FormatError(FormatIssue::kBadMagic, "not an ess checkpoint: " + paths.metadata.string());
  }
  from_json(out.metadata["config"], out.config);
  out.iter = out.metadata.value("iter", std::size_t{0});
  out.model.extractor = decode_essw(io::read_file(paths.extractor));
  out.model.table = load_embeddings(paths.embeddings);
  if (out.model.table.dim() != out.model.extractor.out_dim()) {
    throw FormatError(FormatIssue::kBadShape, "checkpoint: extractor and table dimensions differ");
  }
  return out;
}

}  // namespace ess
