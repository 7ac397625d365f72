#include "ess/config.hpp"

#include <fstream>
#include <initializer_list>
#include <string_view>

#include "ess/error.hpp"

namespace ess {

using nlohmann::json;

namespace {

void require_object(const json& j, std::string_view where,
                    std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorCode::kConfig, std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("config key '") + key + "': " + e.what());
  }
}

template <typename Enum, typename Parse>
void read_enum(const json& j, const char* key, Enum& out, Parse parse) {
  if (!j.contains(key)) return;
  std::string name;
  read(j, key, name);
  out = parse(name);
}

ClassDistribution parse_distribution(const std::string& s) {
  if (s == "uniform") return ClassDistribution::kUniform;
  if (s == "zipf") return ClassDistribution::kZipf;
  throw Error(ErrorCode::kConfig, "unknown class distribution '" + s + "'");
}

TableUpdate parse_table_update(const std::string& s) {
  if (s == "project") return TableUpdate::kProject;
  if (s == "jacobian") return TableUpdate::kJacobian;
  throw Error(ErrorCode::kConfig, "unknown table update '" + s + "'");
}

TargetMerge parse_merge(const std::string& s) {
  if (s == "dedup") return TargetMerge::kDeduplicate;
  if (s == "concat") return TargetMerge::kConcatenate;
  throw Error(ErrorCode::kConfig, "unknown target merge '" + s + "'");
}

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::kMean;
  if (s == "sum") return Reduction::kSum;
  throw Error(ErrorCode::kConfig, "unknown reduction '" + s + "'");
}

MarginGradient parse_margin_gradient(const std::string& s) {
  if (s == "symmetric") return MarginGradient::kSymmetric;
  if (s == "one-sided") return MarginGradient::kOneSided;
  throw Error(ErrorCode::kConfig, "unknown margin gradient '" + s + "'");
}

json schedule_json(const ScheduleConfig& s) {
  return {{"base_lr", s.base_lr}, {"power", s.power}, {"momentum", s.momentum}};
}

void schedule_from_json(const json& j, const char* where, ScheduleConfig& s) {
  require_object(j, where, {"base_lr", "power", "momentum"});
  read(j, "base_lr", s.base_lr);
  read(j, "power", s.power);
  read(j, "momentum", s.momentum);
}

}  // namespace

json to_json(const SyntheticSpec& spec) {
  return {{"classes", spec.num_classes},
          {"feature_dim", spec.feature_dim},
          {"pixels_per_image", spec.pixels_per_image},
          {"images", spec.num_images},
          {"distribution", spec.distribution == ClassDistribution::kZipf ? "zipf" : "uniform"},
          {"zipf_exponent", spec.zipf_exponent},
          {"sigma", spec.sigma},
          {"ignore_fraction", spec.ignore_fraction},
          {"seed", spec.seed}};
}

void from_json(const json& j, SyntheticSpec& out) {
  require_object(j, "synthetic",
                 {"classes", "feature_dim", "pixels_per_image", "images", "distribution",
                  "zipf_exponent", "sigma", "ignore_fraction", "seed"});
  read(j, "classes", out.num_classes);
  read(j, "feature_dim", out.feature_dim);
  read(j, "pixels_per_image", out.pixels_per_image);
  read(j, "images", out.num_images);
  read_enum(j, "distribution", out.distribution, parse_distribution);
  read(j, "zipf_exponent", out.zipf_exponent);
  read(j, "sigma", out.sigma);
  read(j, "ignore_fraction", out.ignore_fraction);
  read(j, "seed", out.seed);
}

json to_json(const TrainConfig& cfg) {
  const LossConfig& l = cfg.loss;
  return {
      {"extractor", to_string(cfg.extractor)},
      {"hidden_dim", cfg.hidden_dim},
      {"embed_dim", cfg.embed_dim},
      {"tau", l.tau},
      {"k", l.k},
      {"margin", l.margin.margin},
      {"use_margin", l.use_margin},
      {"margin_gradient",
       l.margin_gradient == MarginGradient::kSymmetric ? "symmetric" : "one-sided"},
      {"normalize", l.normalize},
      {"table_update", l.table_update == TableUpdate::kProject ? "project" : "jacobian"},
      {"target_merge", l.merge == TargetMerge::kDeduplicate ? "dedup" : "concat"},
      {"reduction", l.reduction == Reduction::kMean ? "mean" : "sum"},
      {"neg_sampling", to_string(cfg.sampling)},
      {"iters", cfg.main.total_iters},
      {"main_schedule", schedule_json(cfg.main)},
      {"embed_schedule", schedule_json(cfg.embed)},
      {"weight_decay", cfg.weight_decay},
      {"batch_size", cfg.batch_size},
      {"seed", cfg.seed},
      {"probe_every", cfg.probe_every},
  };
}

void from_json(const json& j, TrainConfig& out) {
  require_object(j, "train",
                 {"extractor", "hidden_dim", "embed_dim", "tau", "k", "margin", "use_margin",
                  "margin_gradient", "normalize", "table_update", "target_merge", "reduction",
                  "neg_sampling", "iters", "main_schedule", "embed_schedule", "weight_decay",
                  "batch_size", "seed", "probe_every"});
  read_enum(j, "extractor", out.extractor, parse_extractor_kind);
  read(j, "hidden_dim", out.hidden_dim);
  read(j, "embed_dim", out.embed_dim);
  read(j, "tau", out.loss.tau);
  read(j, "k", out.loss.k);
  read(j, "margin", out.loss.margin.margin);
  read(j, "use_margin", out.loss.use_margin);
  read_enum(j, "margin_gradient", out.loss.margin_gradient, parse_margin_gradient);
  read(j, "normalize", out.loss.normalize);
  read_enum(j, "table_update", out.loss.table_update, parse_table_update);
  read_enum(j, "target_merge", out.loss.merge, parse_merge);
  read_enum(j, "reduction", out.loss.reduction, parse_reduction);
  read_enum(j, "neg_sampling", out.sampling, parse_negative_sampling);
  if (j.contains("iters")) {
    read(j, "iters", out.main.total_iters);
    out.embed.total_iters = out.main.total_iters;
  }
  if (j.contains("main_schedule")) schedule_from_json(j["main_schedule"], "main_schedule", out.main);
  if (j.contains("embed_schedule")) {
    schedule_from_json(j["embed_schedule"], "embed_schedule", out.embed);
  }
  read(j, "weight_decay", out.weight_decay);
  read(j, "batch_size", out.batch_size);
  read(j, "seed", out.seed);
  read(j, "probe_every", out.probe_every);
}

json to_json(const RunConfig& cfg) {
  return {{"command", cfg.command},
          {"threads", cfg.threads},
          {"synthetic", to_json(cfg.synthetic)},
          {"train", to_json(cfg.train)},
          {"paths",
           {{"data", cfg.paths.data},
            {"eval_data", cfg.paths.eval_data},
            {"out", cfg.paths.out},
            {"checkpoint", cfg.paths.checkpoint},
            {"embeddings", cfg.paths.embeddings},
            {"frequencies", cfg.paths.frequencies}}},
          {"bench",
           {{"batch", cfg.bench.batch},
            {"height", cfg.bench.height},
            {"width", cfg.bench.width},
            {"classes", cfg.bench.classes},
            {"dim", cfg.bench.dim},
            {"bytes_per_scalar", cfg.bench.bytes_per_scalar},
            {"sweep", cfg.bench.sweep}}},
          {"linkage", to_string(cfg.linkage)}};
}

void from_json(const json& j, RunConfig& out) {
  require_object(j, "config",
                 {"command", "threads", "synthetic", "train", "paths", "bench", "linkage"});
  read(j, "command", out.command);
  read(j, "threads", out.threads);
  if (j.contains("synthetic")) from_json(j["synthetic"], out.synthetic);
  if (j.contains("train")) from_json(j["train"], out.train);
  if (j.contains("paths")) {
    const json& p = j["paths"];
    require_object(p, "paths",
                   {"data", "eval_data", "out", "checkpoint", "embeddings", "frequencies"});
    read(p, "data", out.paths.data);
    read(p, "eval_data", out.paths.eval_data);
    read(p, "out", out.paths.out);
    read(p, "checkpoint", out.paths.checkpoint);
    read(p, "embeddings", out.paths.embeddings);
    read(p, "frequencies", out.paths.frequencies);
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    require_object(b, "bench",
                   {"batch", "height", "width", "classes", "dim", "bytes_per_scalar", "sweep"});
    read(b, "batch", out.bench.batch);
    read(b, "height", out.bench.height);
    read(b, "width", out.bench.width);
    read(b, "classes", out.bench.classes);
    read(b, "dim", out.bench.dim);
    read(b, "bytes_per_scalar", out.bench.bytes_per_scalar);
    read(b, "sweep", out.bench.sweep);
  }
  read_enum(j, "linkage", out.linkage, parse_linkage);
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  from_json(j, base);
  return base;
}

void save_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

}  // namespace ess
