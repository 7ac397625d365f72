#include "ess/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ess/error.hpp"
#include "ess/geometry.hpp"

namespace ess {

void validate(const ScheduleConfig& cfg) {
  if (!(cfg.base_lr >= 0.0)) throw Error(ErrorCode::kConfig, "base_lr must be >= 0");
  if (!(cfg.power > 0.0)) throw Error(ErrorCode::kConfig, "schedule power must be > 0");
  if (cfg.total_iters == 0) throw Error(ErrorCode::kConfig, "total_iters must be > 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw Error(ErrorCode::kConfig, "momentum must lie in [0, 1)");
  }
}

double lr_at(const ScheduleConfig& cfg, std::size_t iter) {
  if (iter > cfg.total_iters) {
    throw_invalid("lr_at: iter " + std::to_string(iter) + " beyond total_iters " +
                  std::to_string(cfg.total_iters));
  }
  const double t = static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
  return cfg.base_lr * std::pow(1.0 - t, cfg.power);
}

const char* to_string(NegativeSampling s) noexcept {
  return s == NegativeSampling::kKnn ? "knn" : "random";
}

NegativeSampling parse_negative_sampling(const std::string& name) {
  if (name == "knn") return NegativeSampling::kKnn;
  if (name == "random") return NegativeSampling::kRandom;
  throw Error(ErrorCode::kConfig, "unknown negative sampling mode '" + name + "'");
}

void validate(const TrainConfig& cfg, std::size_t feature_dim, std::size_t num_classes) {
  try {
    validate(cfg.loss);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
  validate(cfg.main);
  validate(cfg.embed);
  if (cfg.main.total_iters != cfg.embed.total_iters) {
    throw Error(ErrorCode::kConfig, "main and embedding schedules must share total_iters");
  }
  if (num_classes < 2) throw Error(ErrorCode::kConfig, "need at least 2 classes");
  if (cfg.loss.k > num_classes) {
    throw Error(ErrorCode::kConfig, "k=" + std::to_string(cfg.loss.k) + " exceeds C=" +
                                        std::to_string(num_classes));
  }
  if (cfg.embed_dim < 1) throw Error(ErrorCode::kConfig, "embedding dim must be >= 1");
  if (cfg.batch_size < 1) throw Error(ErrorCode::kConfig, "batch size must be >= 1");
  if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::kConfig, "weight decay must be >= 0");
  if (cfg.extractor == ExtractorKind::kIdentity && feature_dim != cfg.embed_dim) {
    throw Error(ErrorCode::kConfig, "identity extractor needs feature_dim == embedding dim");
  }
  if (cfg.extractor == ExtractorKind::kMlp && cfg.hidden_dim < 1) {
    throw Error(ErrorCode::kConfig, "mlp extractor needs hidden_dim >= 1");
  }
}

Model init_model(const TrainConfig& cfg, std::size_t feature_dim, std::size_t num_classes) {
  return Model{
      FeatureExtractor::make(cfg.extractor, feature_dim, cfg.embed_dim, cfg.hidden_dim, cfg.seed),
      init_table(num_classes, cfg.embed_dim, cfg.seed ^ 0x9E3779B97F4A7C15ULL, true)};
}

OptimizerState init_optimizer(const Model& model) {
  OptimizerState s;
  for (const Matrix& p : model.extractor.params()) s.extractor_velocity.emplace_back(p.rows(), p.cols());
  s.table_velocity = Matrix(model.table.num_classes(), model.table.dim());
  return s;
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

void momentum_update(std::span<double> param, std::span<const double> grad,
                     std::span<double> velocity, double momentum, double lr, double decay) {
  for (std::size_t t = 0; t < param.size(); ++t) {
    velocity[t] = momentum * velocity[t] + grad[t] + decay * param[t];
    param[t] -= lr * velocity[t];
  }
}

}  // namespace

void sgd_step(Model& model, const Gradients& grads, OptimizerState& state,
              const ScheduleConfig& main, const ScheduleConfig& embed, const StepOptions& opts) {
  auto& params = model.extractor.params();
  if (grads.extractor.size() != params.size() || state.extractor_velocity.size() != params.size()) {
    throw_invalid("sgd_step: extractor gradient count does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.extractor[i].rows() != params[i].rows() ||
        grads.extractor[i].cols() != params[i].cols()) {
      throw_invalid("sgd_step: extractor gradient shape mismatch");
    }
    if (!all_finite(grads.extractor[i].flat())) {
      throw Error(ErrorCode::kNumerical, "sgd_step: non-finite extractor gradient (param " +
                                             std::to_string(i) + ") at iter " +
                                             std::to_string(state.iter));
    }
  }
  if (grads.table.rows() != model.table.num_classes() || grads.table.cols() != model.table.dim()) {
    throw_invalid("sgd_step: table gradient shape mismatch");
  }
  if (!all_finite(grads.table.flat())) {
    throw Error(ErrorCode::kNumerical,
                "sgd_step: non-finite table gradient at iter " + std::to_string(state.iter));
  }

  const double lr_main = lr_at(main, state.iter);
  const double lr_embed = lr_at(embed, state.iter);
  for (std::size_t i = 0; i < params.size(); ++i) {
    momentum_update(params[i].flat(), grads.extractor[i].flat(),
                    state.extractor_velocity[i].flat(), main.momentum, lr_main,
                    opts.weight_decay);
  }
  momentum_update(model.table.rows().flat(), grads.table.flat(), state.table_velocity.flat(),
                  embed.momentum, lr_embed, 0.0);
  // A zero step leaves the rows as they were, bit for bit.
  if (opts.renormalize_table && lr_embed != 0.0) model.table.renormalize();
  ++state.iter;
}

Matrix embed_features(const Model& model, const Matrix& features, const LossConfig& cfg) {
  return effective_pixels(model.extractor.forward(features), cfg);
}

ForwardBackward forward_backward(const Model& model, const Matrix& features,
                                 std::span<const ClassId> labels, const LossConfig& cfg,
                                 const NeighborIndex* rows) {
  FeatureExtractor::Activations acts;
  const Matrix z = model.extractor.forward(features, &acts);
  const NeighborIndex selected = rows ? *rows : select_neighbors(z, labels, model.table, cfg);
  ForwardBackward out;
  out.report = loss_with_neighbors(z, labels, selected, model.table, cfg);
  out.grads.extractor = model.extractor.backward(features, acts, out.report.grad_pixels);
  out.grads.table = out.report.grad_table;
  return out;
}

NeighborIndex random_negatives(std::span<const ClassId> labels, std::size_t num_classes,
                               std::size_t k, std::mt19937_64& rng) {
  const std::size_t draws = std::min(k, num_classes - 1);
  NeighborIndex out(k);
  std::vector<ClassId> pool(num_classes - 1);
  std::vector<ClassId> row;
  for (ClassId y : labels) {
    row.clear();
    if (y != kIgnoreLabel) {
      if (y >= num_classes) throw_invalid("random_negatives: label out of range");
      row.push_back(y);
      // Partial Fisher-Yates over the non-target classes.
      for (std::size_t c = 0, j = 0; c < num_classes; ++c) {
        if (c != y) pool[j++] = static_cast<ClassId>(c);
      }
      for (std::size_t j = 0; j < draws; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
        std::swap(pool[j], pool[pick(rng)]);
        row.push_back(pool[j]);
      }
    }
    out.push_row(row);
  }
  return out;
}

double exact_cross_entropy(const Model& model, const Dataset& data, const LossConfig& cfg) {
  const Matrix x = embed_features(model, data.all_features(), cfg);
  const EmbeddingTable centroids = effective_centroids(model.table, cfg);
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> z(centroids.num_classes());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ClassId y = data.labels[i];
    if (y == kIgnoreLabel) continue;
    for (std::size_t c = 0; c < z.size(); ++c) z[c] = -sq_dist(x.row(i), centroids.row(c)) / cfg.tau;
    total += log_sum_exp(z) - z[y];
    ++counted;
  }
  if (counted == 0) throw Error(ErrorCode::kEmptyBatch, "exact_cross_entropy: no labelled pixels");
  return total / static_cast<double>(counted);
}

LabelBatch predict_dataset(const Model& model, const Dataset& data, const LossConfig& cfg) {
  return predict(embed_features(model, data.all_features(), cfg),
                 effective_centroids(model.table, cfg), cfg.threads);
}

Metrics evaluate(const Model& model, const Dataset& data, const LossConfig& cfg) {
  ConfusionMatrix cm(data.num_classes);
  cm.accumulate(predict_dataset(model, data, cfg), data.labels);
  return compute_metrics(cm);
}

TrainResult train(const Dataset& train_set, const TrainConfig& cfg, const Dataset* eval) {
  if (train_set.size() == 0) throw Error(ErrorCode::kConfig, "training set is empty");
  validate(cfg, train_set.feature_dim, train_set.num_classes);
  const Dataset& eval_set = eval ? *eval : train_set;
  if (eval_set.feature_dim != train_set.feature_dim ||
      eval_set.num_classes != train_set.num_classes) {
    throw Error(ErrorCode::kConfig, "evaluation set shape differs from the training set");
  }

  TrainResult result{init_model(cfg, train_set.feature_dim, train_set.num_classes), {}, {}, {}, {}};
  result.state = init_optimizer(result.model);
  Model& model = result.model;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  std::mt19937_64 negative_rng(cfg.seed ^ 0x8CB92BA72F3D8DD7ULL);
  const StepOptions step_opts{cfg.weight_decay,
                              cfg.loss.normalize && cfg.loss.table_update == TableUpdate::kProject};
  const std::size_t total = cfg.main.total_iters;
  const std::size_t C = train_set.num_classes;

  auto probe = [&] {
    const double loss = exact_cross_entropy(model, eval_set, cfg.loss);
    result.probes.push_back({result.state.iter, loss, evaluate(model, eval_set, cfg.loss).pacc});
  };

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t epoch = 0;
  if (cfg.probe_every > 0) probe();
  while (result.state.iter < total) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size() && result.state.iter < total;
         start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      const Matrix features = train_set.gather(idx);
      const LabelBatch labels = train_set.gather_labels(idx);
      const bool any_labelled = std::any_of(labels.begin(), labels.end(),
                                            [](ClassId y) { return y != kIgnoreLabel; });

      Gradients grads;
      double cls = 0.0, reg = 0.0;
      if (any_labelled) {
        std::optional<NeighborIndex> rows;
        if (cfg.sampling == NegativeSampling::kRandom) {
          rows = random_negatives(labels, C, cfg.loss.k, negative_rng);
        }
        ForwardBackward fb =
            forward_backward(model, features, labels, cfg.loss, rows ? &*rows : nullptr);
        grads = std::move(fb.grads);
        cls = fb.report.classification_loss;
        reg = fb.report.regularization_loss;
      } else {
        RegularizationTerm term = regularization_term(model.table, cfg.loss);
        for (const Matrix& p : model.extractor.params()) grads.extractor.emplace_back(p.rows(), p.cols());
        grads.table = std::move(term.grad_table);
        reg = term.value;
      }

      const std::size_t iter = result.state.iter;
      result.history.push_back({iter, lr_at(cfg.main, iter), lr_at(cfg.embed, iter), cls, reg});
      sgd_step(model, grads, result.state, cfg.main, cfg.embed, step_opts);
      epoch_loss += cls;
      ++epoch_steps;
      if (cfg.probe_every > 0 &&
          (result.state.iter % cfg.probe_every == 0 || result.state.iter == total)) {
        probe();
      }
    }
    result.epochs.push_back({epoch, result.state.iter,
                             epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_steps, 1)),
                             evaluate(model, eval_set, cfg.loss)});
    ++epoch;
  }
  return result;
}

}  // namespace ess
