#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <new>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ess/checkpoint.hpp"
#include "ess/config.hpp"
#include "ess/data.hpp"
#include "ess/embeddings.hpp"
#include "ess/error.hpp"
#include "ess/eval.hpp"
#include "ess/geometry.hpp"
#include "ess/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ess;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfigExit = 2, kIoExit = 3, kNumericalExit = 4 };

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfig: return kConfigExit;
    case ErrorCode::kIo:
    case ErrorCode::kFormat:
    case ErrorCode::kEmptyBatch: return kIoExit;
    case ErrorCode::kNumerical: return kNumericalExit;
  }
  return kUnexpected;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump()
            << '\n';
  return code;
}

void emit(const json& j, const std::string& out_file) {
  std::cout << j.dump(2) << '\n';
  if (!out_file.empty()) save_json(j, out_file);
}

// Resolved configuration written next to a run's outputs.
void snapshot(const RunConfig& cfg, const fs::path& where) { save_json(to_json(cfg), where); }

fs::path sidecar(const std::string& file) { return fs::path(file + ".config.json"); }

int default_threads() {
  const char* env = std::getenv("ESS_THREADS");
  if (!env || !*env) return 1;
  try {
    std::size_t used = 0;
    const int n = std::stoi(env, &used);
    if (used == std::string(env).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, std::string("ESS_THREADS must be a positive integer, got '") +
                                      env + "'");
}

// --config is applied before the remaining flags so that flags override it.
std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

std::vector<double> read_frequencies(const std::string& path, std::size_t num_classes) {
  if (fs::path(path).extension() == ".essd") {
    const Dataset d = load_dataset(path);
    if (d.num_classes != num_classes) {
      throw Error(ErrorCode::kConfig, "frequency dataset has " + std::to_string(d.num_classes) +
                                          " classes, embeddings have " +
                                          std::to_string(num_classes));
    }
    const auto h = class_histogram(d);
    return {h.begin(), h.end()};
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, "frequency file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_array() || j.size() != num_classes) {
    throw Error(ErrorCode::kFormat, "frequency file must be a JSON array of " +
                                        std::to_string(num_classes) + " numbers");
  }
  std::vector<double> f;
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(ErrorCode::kFormat, "frequency entries must be numbers");
    f.push_back(v.get<double>());
  }
  return f;
}

json train_summary(const TrainResult& r, const Dataset& eval_set, const LossConfig& loss) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"iter", e.iter},
                      {"mean_cls_loss", e.mean_cls_loss},
                      {"miou", e.metrics.miou},
                      {"pacc", e.metrics.pacc},
                      {"fwiou", e.metrics.fwiou}});
  }
  json out = {{"iters", r.state.iter},
              {"final", to_json(evaluate(r.model, eval_set, loss))},
              {"exact_loss", exact_cross_entropy(r.model, eval_set, loss)},
              {"epochs", epochs}};
  if (eval_set.has_prototypes()) out["bayes_accuracy"] = bayes_accuracy(eval_set);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  try {
    const std::string config_path = find_config_arg(argc, argv);
    cfg.threads = default_threads();
    if (!config_path.empty()) cfg = load_run_config(config_path, cfg);
  } catch (const Error& e) {
    return report_error(to_string(e.code()), e.what(), exit_code(e.code()));
  }

  CLI::App app{"Embedding-based scalable classification for dense prediction"};
  app.require_subcommand(1);
  app.allow_extras(false);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Print help for every subcommand and exit");
  std::string config_file;
  app.add_option("--config", config_file, "JSON run config; explicit flags override its values")
      ->check(CLI::ExistingFile);
  app.add_option("--threads", cfg.threads, "Worker threads (default: $ESS_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  // Enum-valued flags go through strings and are applied after parsing.
  std::string distribution, extractor, margin_gradient, table_update, target_merge, reduction,
      sampling, linkage;
  const auto one_of = [](std::vector<std::string> v) { return CLI::IsMember(std::move(v)); };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic Gaussian-mixture dataset");
  auto& syn = cfg.synthetic;
  gen->add_option("--classes", syn.num_classes, "Number of classes")->check(CLI::PositiveNumber);
  gen->add_option("--feature-dim,--dim", syn.feature_dim, "Raw feature dimension")
      ->check(CLI::PositiveNumber);
  gen->add_option("--pixels-per-image", syn.pixels_per_image, "Pixels per image");
  gen->add_option("--images", syn.num_images, "Number of images");
  gen->add_option("--distribution", distribution, "Class distribution")
      ->check(one_of({"uniform", "zipf"}));
  gen->add_option("--zipf-exponent", syn.zipf_exponent, "Zipf exponent s (p_c ~ 1/(c+1)^s)");
  gen->add_option("--sigma", syn.sigma, "Isotropic noise scale");
  gen->add_option("--ignore-fraction", syn.ignore_fraction, "Fraction of ignore-labelled pixels");
  gen->add_option("--seed", syn.seed, "Random seed");
  gen->add_option("--out", cfg.paths.data, "Output ESSD file");
  std::size_t holdout_images = 0;
  gen->add_option("--holdout-images", holdout_images,
                  "Move the last N images to --holdout-out (same prototypes)");
  gen->add_option("--holdout-out", cfg.paths.eval_data, "Output ESSD file for the held-out images");

  auto* tr = app.add_subcommand("train", "Train an extractor and class embedding table");
  auto& t = cfg.train;
  tr->add_option("--data", cfg.paths.data, "Training ESSD file");
  tr->add_option("--eval-data", cfg.paths.eval_data, "Evaluation ESSD file (default: training set)");
  tr->add_option("--out", cfg.paths.out, "Output directory for checkpoint, loss.csv, metrics");
  tr->add_option("--extractor", extractor, "Feature extractor")
      ->check(one_of({"identity", "linear", "mlp"}));
  tr->add_option("--hidden-dim", t.hidden_dim, "Hidden width of the mlp extractor");
  tr->add_option("--embed-dim,-d", t.embed_dim, "Embedding dimension d");
  tr->add_option("--tau", t.loss.tau, "Softmax temperature");
  tr->add_option("--k", t.loss.k, "Number of nearest class embeddings in the approximate softmax");
  tr->add_option("--margin", t.loss.margin.margin, "Max-margin regularizer margin");
  tr->add_flag("--use-margin,!--no-margin", t.loss.use_margin, "Toggle the max-margin loss");
  tr->add_option("--margin-gradient", margin_gradient, "Margin subgradient form")
      ->check(one_of({"symmetric", "one-sided"}));
  tr->add_flag("--normalize,!--no-normalize", t.loss.normalize, "Toggle unit-sphere normalization");
  tr->add_option("--table-update", table_update, "Table update under normalization")
      ->check(one_of({"project", "jacobian"}));
  tr->add_option("--target-merge", target_merge, "How the target joins its neighbour set")
      ->check(one_of({"dedup", "concat"}));
  tr->add_option("--reduction", reduction, "Loss reduction")->check(one_of({"mean", "sum"}));
  tr->add_option("--neg-sampling", sampling, "Negative classes: k nearest or k random")
      ->check(one_of({"knn", "random"}));
  tr->add_option("--iters", t.main.total_iters, "Total SGD iterations")->check(CLI::PositiveNumber);
  tr->add_option("--lr", t.main.base_lr, "Extractor base learning rate");
  tr->add_option("--power", t.main.power, "Extractor schedule power");
  tr->add_option("--momentum", t.main.momentum, "Extractor momentum");
  tr->add_option("--embed-lr", t.embed.base_lr, "Embedding table base learning rate");
  tr->add_option("--embed-power", t.embed.power, "Embedding table schedule power");
  tr->add_option("--embed-momentum", t.embed.momentum, "Embedding table momentum");
  tr->add_option("--weight-decay", t.weight_decay, "L2 decay on extractor weights");
  tr->add_option("--batch-size", t.batch_size, "Pixels per batch")->check(CLI::PositiveNumber);
  tr->add_option("--seed", t.seed, "Random seed");
  tr->add_option("--probe-every", t.probe_every, "Exact-loss probe interval (0 = off)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_out;
  ev->add_option("--checkpoint", cfg.paths.checkpoint, "Checkpoint directory");
  ev->add_option("--data", cfg.paths.data, "ESSD file to evaluate on");
  ev->add_option("--out", eval_out, "Also write the metrics JSON here");

  auto* bm = app.add_subcommand("bench-memory", "Output-head memory: dense C-channel vs d-channel");
  auto& b = cfg.bench;
  std::string bench_out;
  bm->add_option("--batch", b.batch, "Batch size B")->check(CLI::PositiveNumber);
  bm->add_option("--height", b.height, "Height H")->check(CLI::PositiveNumber);
  bm->add_option("--width", b.width, "Width W")->check(CLI::PositiveNumber);
  bm->add_option("--classes", b.classes, "Number of classes C")->check(CLI::PositiveNumber);
  bm->add_option("--dim", b.dim, "Embedding dimension d")->check(CLI::PositiveNumber);
  bm->add_option("--bytes", b.bytes_per_scalar, "Bytes per scalar")->check(CLI::PositiveNumber);
  bm->add_option("--sweep", b.sweep, "Class counts to sweep at fixed d")->delimiter(',');
  bm->add_option("--out", bench_out, "Also write the JSON report here");

  auto* an = app.add_subcommand("analyze-embeddings",
                                "Cluster class embeddings and correlate row norms with frequency");
  std::string analyze_out;
  an->add_option("--embeddings", cfg.paths.embeddings, "ESSE file, or use --checkpoint");
  an->add_option("--checkpoint", cfg.paths.checkpoint, "Checkpoint directory");
  an->add_option("--frequencies", cfg.paths.frequencies,
                 "Class frequencies: a JSON array, or an ESSD file to count labels from");
  an->add_option("--linkage", linkage, "Linkage")->check(one_of({"average", "single", "complete"}));
  an->add_option("--out", analyze_out, "Also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return report_error("config", e.what(), kConfigExit);
  }

  try {
    t.embed.total_iters = t.main.total_iters;
    if (!distribution.empty()) {
      syn.distribution = distribution == "zipf" ? ClassDistribution::kZipf : ClassDistribution::kUniform;
    }
    if (!extractor.empty()) t.extractor = parse_extractor_kind(extractor);
    if (!margin_gradient.empty()) {
      t.loss.margin_gradient =
          margin_gradient == "symmetric" ? MarginGradient::kSymmetric : MarginGradient::kOneSided;
    }
    if (!table_update.empty()) {
      t.loss.table_update = table_update == "project" ? TableUpdate::kProject : TableUpdate::kJacobian;
    }
    if (!target_merge.empty()) {
      t.loss.merge = target_merge == "dedup" ? TargetMerge::kDeduplicate : TargetMerge::kConcatenate;
    }
    if (!reduction.empty()) t.loss.reduction = reduction == "mean" ? Reduction::kMean : Reduction::kSum;
    if (!sampling.empty()) t.sampling = parse_negative_sampling(sampling);
    if (!linkage.empty()) cfg.linkage = parse_linkage(linkage);
    t.loss.threads = cfg.threads;

    if (*gen) {
      cfg.command = "gen-data";
      if (cfg.paths.data.empty()) throw Error(ErrorCode::kConfig, "gen-data needs --out");
      validate(syn);
      if (holdout_images >= syn.num_images) {
        throw Error(ErrorCode::kConfig, "--holdout-images must be below --images");
      }
      if ((holdout_images > 0) != !cfg.paths.eval_data.empty()) {
        throw Error(ErrorCode::kConfig, "--holdout-images and --holdout-out go together");
      }
      const Dataset all = gen_synthetic(syn);
      const std::size_t cut = (syn.num_images - holdout_images) * syn.pixels_per_image;
      const Dataset d = all.slice(0, cut);
      save_dataset(d, cfg.paths.data);
      json out = {{"out", cfg.paths.data},
                  {"pixels", d.size()},
                  {"classes", d.num_classes},
                  {"feature_dim", d.feature_dim},
                  {"histogram", class_histogram(d)}};
      if (holdout_images > 0) {
        const Dataset held = all.slice(cut, all.size());
        save_dataset(held, cfg.paths.eval_data);
        out["holdout_out"] = cfg.paths.eval_data;
        out["holdout_pixels"] = held.size();
      }
      snapshot(cfg, sidecar(cfg.paths.data));
      emit(out, "");
    } else if (*tr) {
      cfg.command = "train";
      if (cfg.paths.data.empty()) throw Error(ErrorCode::kConfig, "train needs --data");
      if (cfg.paths.out.empty()) throw Error(ErrorCode::kConfig, "train needs --out");
      const Dataset train_set = load_dataset(cfg.paths.data);
      Dataset eval_set;
      if (!cfg.paths.eval_data.empty()) eval_set = load_dataset(cfg.paths.eval_data);
      const Dataset& eval_ref = cfg.paths.eval_data.empty() ? train_set : eval_set;
      validate(t, train_set.feature_dim, train_set.num_classes);
      fs::create_directories(cfg.paths.out);
      snapshot(cfg, fs::path(cfg.paths.out) / "config.json");
      const TrainResult r = train(train_set, t, &eval_ref);
      save_checkpoint(cfg.paths.out, t, r, train_set.feature_dim, train_set.num_classes);
      emit(train_summary(r, eval_ref, t.loss), (fs::path(cfg.paths.out) / "metrics.json").string());
    } else if (*ev) {
      cfg.command = "eval";
      if (cfg.paths.checkpoint.empty()) throw Error(ErrorCode::kConfig, "eval needs --checkpoint");
      if (cfg.paths.data.empty()) throw Error(ErrorCode::kConfig, "eval needs --data");
      LoadedCheckpoint ck = load_checkpoint(cfg.paths.checkpoint);
      const Dataset d = load_dataset(cfg.paths.data);
      if (d.feature_dim != ck.model.extractor.in_dim() ||
          d.num_classes != ck.model.table.num_classes()) {
        throw Error(ErrorCode::kConfig, "dataset shape does not match the checkpoint");
      }
      ck.config.loss.threads = cfg.threads;
      cfg.train = ck.config;
      json out = to_json(evaluate(ck.model, d, ck.config.loss));
      out["exact_loss"] = exact_cross_entropy(ck.model, d, ck.config.loss);
      out["checkpoint_iter"] = ck.iter;
      if (!eval_out.empty()) snapshot(cfg, sidecar(eval_out));
      emit(out, eval_out);
    } else if (*bm) {
      cfg.command = "bench-memory";
      json out;
      if (b.sweep.empty()) {
        out = to_json(memory_estimate(b.batch, b.height, b.width, b.classes, b.dim,
                                      b.bytes_per_scalar));
      } else {
        json rows = json::array();
        for (std::uint64_t c : b.sweep) {
          rows.push_back(to_json(memory_estimate(b.batch, b.height, b.width, c, b.dim,
                                                 b.bytes_per_scalar)));
        }
        out = {{"dim", b.dim}, {"sweep", rows}};
      }
      if (!bench_out.empty()) snapshot(cfg, sidecar(bench_out));
      emit(out, bench_out);
    } else if (*an) {
      cfg.command = "analyze-embeddings";
      EmbeddingTable table = [&] {
        if (!cfg.paths.embeddings.empty()) return load_embeddings(cfg.paths.embeddings);
        if (!cfg.paths.checkpoint.empty()) {
          return load_embeddings(CheckpointPaths(cfg.paths.checkpoint).embeddings);
        }
        throw Error(ErrorCode::kConfig, "analyze-embeddings needs --embeddings or --checkpoint");
      }();
      json norms = json::array();
      for (std::size_t c = 0; c < table.num_classes(); ++c) norms.push_back(norm(table.row(c)));
      json out = {{"classes", table.num_classes()},
                  {"dim", table.dim()},
                  {"norms", norms},
                  {"dendrogram",
                   dendrogram_to_json(agglomerative_cluster(table, cfg.linkage), cfg.linkage)}};
      if (!cfg.paths.frequencies.empty()) {
        const auto freq = read_frequencies(cfg.paths.frequencies, table.num_classes());
        try {
          out["norm_frequency_r"] = norm_frequency_correlation(table, freq);
        } catch (const Error& e) {
          // Constant norms (a normalized table) have no correlation to report.
          out["norm_frequency_r"] = nullptr;
          out["norm_frequency_note"] = e.what();
        }
      }
      if (!analyze_out.empty()) snapshot(cfg, sidecar(analyze_out));
      emit(out, analyze_out);
    }
    return kOk;
  } catch (const Error& e) {
    return report_error(to_string(e.code()), e.what(), exit_code(e.code()));
  } catch (const fs::filesystem_error& e) {
    return report_error("io", e.what(), kIoExit);
  } catch (const std::bad_alloc&) {
    return report_error("resource", "out of memory", kIoExit);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), kUnexpected);
  }
}
