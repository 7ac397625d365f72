#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "ess/data.hpp"
#include "ess/embeddings.hpp"
#include "ess/eval.hpp"
#include "ess/extractor.hpp"
#include "ess/knn.hpp"
#include "ess/loss.hpp"

namespace ess {

/// Polynomial decay: lr(iter) = base_lr * (1 - iter / total_iters)^power.
struct ScheduleConfig {
  double base_lr = 0.01;
  double power = 0.9;
  std::size_t total_iters = 1000;
  double momentum = 0.9;
};

void validate(const ScheduleConfig& cfg);

/// Throws Error(kInvalidArgument) when iter > total_iters.
double lr_at(const ScheduleConfig& cfg, std::size_t iter);

enum class NegativeSampling {
  kKnn,     // k nearest class embeddings (hard negatives)
  kRandom,  // k classes drawn uniformly from the non-target classes
};

const char* to_string(NegativeSampling s) noexcept;
NegativeSampling parse_negative_sampling(const std::string& name);

struct Model {
  FeatureExtractor extractor;
  EmbeddingTable table;
};

struct TrainConfig {
  ExtractorKind extractor = ExtractorKind::kLinear;
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 16;
  LossConfig loss{};
  NegativeSampling sampling = NegativeSampling::kKnn;
  ScheduleConfig main{0.01, 0.9, 1000, 0.9};
  ScheduleConfig embed{0.01, 0.95, 1000, 0.95};
  /// L2 decay on extractor parameters only.
  double weight_decay = 1e-4;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  /// Exact-loss probe on the evaluation set every this many iterations
  /// (0 disables probing).
  std::size_t probe_every = 0;
};

/// Checks the configuration against the data shape. Throws Error(kConfig).
void validate(const TrainConfig& cfg, std::size_t feature_dim, std::size_t num_classes);

/// Extractor seeded from cfg.seed, table from a derived stream. The table is
/// normalized unless cfg.loss.normalize is off.
Model init_model(const TrainConfig& cfg, std::size_t feature_dim, std::size_t num_classes);

struct Gradients {
  std::vector<Matrix> extractor;
  Matrix table;
};

struct OptimizerState {
  std::vector<Matrix> extractor_velocity;
  Matrix table_velocity;
  std::size_t iter = 0;
};

OptimizerState init_optimizer(const Model& model);

struct StepOptions {
  double weight_decay = 0.0;
  /// Re-project table rows onto the unit sphere after the update.
  bool renormalize_table = false;
};

/// v <- momentum * v + g; p <- p - lr(iter) * v, with the extractor on
/// `main` and the table on `embed`. Advances state.iter. Throws
/// Error(kNumerical) before touching anything if a gradient is non-finite.
void sgd_step(Model& model, const Gradients& grads, OptimizerState& state,
              const ScheduleConfig& main, const ScheduleConfig& embed, const StepOptions& opts);

/// Pixel embeddings the loss and predictor see for raw features.
Matrix embed_features(const Model& model, const Matrix& features, const LossConfig& cfg);

struct ForwardBackward {
  LossReport report;
  Gradients grads;
};

/// Extractor forward, detached neighbour selection (unless `rows` is given),
/// loss, and backprop into every parameter. Weight decay is not included.
ForwardBackward forward_backward(const Model& model, const Matrix& features,
                                 std::span<const ClassId> labels, const LossConfig& cfg,
                                 const NeighborIndex* rows = nullptr);

/// Rows [y, k distinct uniformly drawn classes != y] (k clamped to C - 1).
NeighborIndex random_negatives(std::span<const ClassId> labels, std::size_t num_classes,
                               std::size_t k, std::mt19937_64& rng);

/// Mean full-softmax cross-entropy over non-ignored pixels.
double exact_cross_entropy(const Model& model, const Dataset& data, const LossConfig& cfg);

LabelBatch predict_dataset(const Model& model, const Dataset& data, const LossConfig& cfg);
Metrics evaluate(const Model& model, const Dataset& data, const LossConfig& cfg);

struct IterRecord {
  std::size_t iter;
  double lr_main;
  double lr_embed;
  double cls_loss;
  double reg_loss;
};

struct ProbeRecord {
  std::size_t iter;  // parameters after this many steps
  double exact_loss;
  double pixel_accuracy;
};

struct EpochRecord {
  std::size_t epoch;
  std::size_t iter;
  double mean_cls_loss;
  Metrics metrics;
};

struct TrainResult {
  Model model;
  OptimizerState state;
  std::vector<IterRecord> history;
  std::vector<ProbeRecord> probes;
  std::vector<EpochRecord> epochs;
};

/// Runs cfg.main.total_iters SGD steps over shuffled fixed-size batches
/// (last short batch kept). Metrics are computed on `eval` when given,
/// otherwise on `train`. Bitwise deterministic for a fixed seed at
/// cfg.loss.threads == 1.
TrainResult train(const Dataset& train, const TrainConfig& cfg, const Dataset* eval = nullptr);

}  // namespace ess
