#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tcnet/checkpoint.hpp"
#include "tcnet/data/dataset.hpp"
#include "tcnet/data/shift.hpp"
#include "tcnet/digest.hpp"
#include "tcnet/losses.hpp"
#include "tcnet/metrics.hpp"
#include "tcnet/model.hpp"

namespace tcnet::train {

using data::DomainDataset;

struct TrainConfig {
  std::size_t max_epochs = 250;
  std::size_t batch_size = 256;
  double initial_lr = 0.1;
  double lr_decay_gamma = 0.96;
  std::size_t early_stop_patience = 15;
  double momentum = 0.0;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  LossConfig loss;
  model::ModelConfig model;

  void validate() const {
    if (max_epochs < 1) fail(ErrorKind::InvalidArgument, "max_epochs must be >= 1");
    if (batch_size < 2) fail(ErrorKind::InvalidArgument, "batch_size must be >= 2");
    if (early_stop_patience < 1) fail(ErrorKind::InvalidArgument, "early_stop_patience must be >= 1");
    if (!(initial_lr > 0.0)) fail(ErrorKind::InvalidArgument, "initial_lr must be positive");
    if (!(lr_decay_gamma > 0.0 && lr_decay_gamma <= 1.0)) fail(ErrorKind::InvalidArgument, "lr_decay_gamma must lie in (0,1]");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::InvalidArgument, "momentum must lie in [0,1)");
    loss.validate();
    model.validate();
  }
};

/// lr at epoch e is initial_lr * gamma^e.
inline double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.initial_lr * std::pow(cfg.lr_decay_gamma, static_cast<double>(epoch));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lambda = 0.0;
  double train_weighted = 0.0;
  double train_coral = 0.0;
  double train_total = 0.0;
  double val_loss = 0.0;
  double val_recall = 0.0;
  double val_f1 = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},           {"lambda", lambda},   {"train_weighted", train_weighted},
            {"train_coral", train_coral}, {"train_total", train_total}, {"val_loss", val_loss},
            {"val_recall", val_recall}, {"val_f1", val_f1},   {"lr", lr}};
  }
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::string stopping_reason;
  std::size_t best_epoch = 0;

  /// JSON lines: one epoch record per line.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) out += e.to_json().dump() + "\n";
    return out;
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

}  // namespace detail

/// SGD with optional momentum: v <- mu v + g; theta <- theta - lr v.
inline void sgd_update(ParamStore& params, const ParamStore& grads, double lr, double momentum,
                       ParamStore* velocity) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params.entries()[i].value;
    const Matrix& g = grads.entries()[i].value;
    if (momentum > 0.0 && velocity) {
      Matrix& v = velocity->entries()[i].value;
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = momentum * v[k] + g[k];
        p[k] -= lr * v[k];
      }
    } else {
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
    }
  }
}

/// Loss and gradients for one paired batch.
struct StepResult {
  LossBreakdown loss;
  ParamStore grads;
};

inline StepResult compute_step(const model::Network& net, const ParamStore& params, const Matrix& xs,
                               std::span<const double> ys, const Matrix& xt, std::size_t epoch,
                               std::size_t total_epochs, const LossConfig& loss_cfg) {
  ad::Tape tape;
  BoundParams p(tape, params);
  auto [s, t] = net.forward_two_stream(tape, p, xs, xt, true);
  auto loss = total_loss(s.probs, ys, s.features, t.features, epoch, total_epochs, loss_cfg);
  tape.backward(loss.total);
  return {loss.breakdown, p.gradients()};
}

/// Weighted BCE only (no target pairing) plus minority metrics on a labeled set.
struct ValidationResult {
  double loss = 0.0;
  MetricReport metrics;
};

inline ValidationResult validate_on(const model::Network& net, const ParamStore& params, const DomainDataset& d,
                                    const LossConfig& loss_cfg) {
  const auto probs = model::predict_probs(net, params, d.encoded());
  const auto y = d.labels_as_double();
  ValidationResult v;
  v.loss = weighted_bce(probs, y, loss_cfg.minority_weight, loss_cfg.prob_clamp);
  v.metrics = metrics_from_counts(confusion(probs, d.labels()));
  return v;
}

/// Trains on labeled source rows paired with unlabeled synthetic target rows.
/// The target's labels, if any, are never read. Returns the parameters of the
/// epoch with the lowest validation loss.
inline TrainResult train(const DomainDataset& source_train, const DomainDataset& source_val,
                         const DomainDataset& synthetic_target, const TrainConfig& cfg) {
  cfg.validate();
  if (source_train.size() < 2 || source_val.empty() || synthetic_target.empty())
    fail(ErrorKind::EmptyDataset, "train: source_train needs >= 2 rows, validation and target must be non-empty");
  if (!(source_train.schema() == source_val.schema()) || !(source_train.schema() == synthetic_target.schema()))
    fail(ErrorKind::SchemaMismatch, "train: datasets have different schemas");

  const model::Network net(source_train.schema(), cfg.model);
  ParamStore params = model::init_params(source_train.schema(), cfg.model, derive_seed(cfg.seed, 1));
  ParamStore velocity = params;
  for (auto& e : velocity.entries()) std::fill(e.value.values().begin(), e.value.values().end(), 0.0);

  const Matrix& xs_all = source_train.encoded();
  const Matrix& xt_all = synthetic_target.encoded();
  const auto ys_all = source_train.labels_as_double();
  const std::size_t ns = source_train.size(), nt = synthetic_target.size();

  TrainHistory history;
  ParamStore best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  history.stopping_reason = "max_epochs";

  std::vector<std::size_t> sperm(ns), tperm(nt);
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 1000 + epoch));
    std::iota(sperm.begin(), sperm.end(), 0);
    std::iota(tperm.begin(), tperm.end(), 0);
    std::shuffle(sperm.begin(), sperm.end(), rng);
    std::shuffle(tperm.begin(), tperm.end(), rng);
    std::size_t tcursor = 0;

    const double lr = learning_rate(cfg, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.lambda = lambda_schedule(epoch, cfg.max_epochs, cfg.loss);
    std::size_t batches = 0;
    for (std::size_t start = 0, batch = 0; start < ns; start += cfg.batch_size, ++batch) {
      const std::size_t n = std::min(cfg.batch_size, ns - start);
      if (n < 2) break;  // CORAL needs at least two rows
      std::span<const std::size_t> srows(sperm.data() + start, n);
      std::vector<std::size_t> trows(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (tcursor == nt) {
          std::shuffle(tperm.begin(), tperm.end(), rng);
          tcursor = 0;
        }
        trows[i] = tperm[tcursor++];
      }
      std::vector<double> ys(n);
      for (std::size_t i = 0; i < n; ++i) ys[i] = ys_all[srows[i]];
      auto step = compute_step(net, params, detail::gather_rows(xs_all, srows), ys, detail::gather_rows(xt_all, trows),
                               epoch, cfg.max_epochs, cfg.loss);
      if (!std::isfinite(step.loss.total)) {
        fail(ErrorKind::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                           std::to_string(batch));
      }
      sgd_update(params, step.grads, lr, cfg.momentum, &velocity);
      rec.train_weighted += step.loss.weighted;
      rec.train_coral += step.loss.coral;
      rec.train_total += step.loss.total;
      ++batches;
    }
    if (batches > 0) {
      rec.train_weighted /= static_cast<double>(batches);
      rec.train_coral /= static_cast<double>(batches);
      rec.train_total /= static_cast<double>(batches);
    }
    const auto val = validate_on(net, params, source_val, cfg.loss);
    if (!std::isfinite(val.loss))
      fail(ErrorKind::NonFiniteLoss, "non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_loss = val.loss;
    rec.val_recall = val.metrics.recall;
    rec.val_f1 = val.metrics.f1;
    history.epochs.push_back(rec);

    if (val.loss < best_loss) {
      best_loss = val.loss;
      best = params;
      history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      history.stopping_reason = "early_stopping";
      break;
    }
  }

  Checkpoint ckpt;
  ckpt.config = cfg.model;
  ckpt.schema = source_train.schema();
  ckpt.stats = source_train.stats();
  ckpt.marginals = categorical_marginals(source_train);
  ckpt.params = std::move(best);
  ckpt.metadata = {{"best_epoch", history.best_epoch}, {"stopping_reason", history.stopping_reason}};
  return {std::move(ckpt), std::move(history)};
}

struct PreparedData {
  DomainDataset train, val, synthetic;
};

/// Stratified split of the raw source, then encoding of all three sets with
/// the training split's standardization.
inline PreparedData prepare_training_data(const DomainDataset& source, const DomainDataset& synthetic,
                                          double train_fraction, std::uint64_t seed) {
  auto [tr, va] = data::split_source(source, train_fraction, seed);
  data::encode(tr);
  data::encode(va, &tr);
  DomainDataset syn = synthetic;
  data::encode(syn, &tr);
  return {std::move(tr), std::move(va), std::move(syn)};
}

/// Re-encodes a dataset into the checkpoint's input space.
inline DomainDataset encode_for(const Checkpoint& ckpt, const DomainDataset& d) {
  if (!(d.schema() == ckpt.schema)) fail(ErrorKind::SchemaMismatch, "dataset schema differs from checkpoint schema");
  DomainDataset out = d;
  data::encode_with_stats(out, ckpt.stats);
  return out;
}

struct Evaluation {
  ConfusionCounts counts;
  MetricReport report;
};

inline Evaluation evaluate(const Checkpoint& ckpt, const DomainDataset& dataset, double threshold = 0.5) {
  if (!dataset.has_labels()) fail(ErrorKind::UnlabeledDataset, "evaluate needs a labeled dataset");
  const auto enc = encode_for(ckpt, dataset);
  const auto probs = model::predict_probs(ckpt.network(), ckpt.params, enc.encoded());
  Evaluation e;
  e.counts = confusion(probs, dataset.labels(), threshold);
  e.report = metrics_from_counts(e.counts);
  return e;
}

/// Metrics restricted to each shift group, largest group first. With a
/// reference (training) report, decreasing rates are attached where defined.
inline MetricReport evaluate_groups(const Checkpoint& ckpt, const DomainDataset& target, const data::ShiftGroups& groups,
                                    const std::optional<MetricReport>& reference = std::nullopt,
                                    double threshold = 0.5) {
  if (!target.has_labels()) fail(ErrorKind::UnlabeledDataset, "evaluate_groups needs a labeled target");
  const auto circles = target.distinct_circles();
  const auto enc = encode_for(ckpt, target);
  const auto probs = model::predict_probs(ckpt.network(), ckpt.params, enc.encoded());

  MetricReport report = metrics_from_counts(confusion(probs, target.labels(), threshold));
  if (reference && report.recall > 0.0 && report.f1 > 0.0) report.rates = decreasing_rates(*reference, report);
  auto ordered = groups.groups;
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.size > b.size; });
  for (const auto& g : ordered) {
    for (const auto& c : g.circle_ids)
      if (std::find(circles.begin(), circles.end(), c) == circles.end())
        fail(ErrorKind::CircleMismatch, "group circle '" + c + "' does not occur in the target data");
    const auto rows = target.rows_in_circles(g.circle_ids);
    std::vector<double> gp;
    std::vector<int> gy;
    for (std::size_t r : rows) {
      gp.push_back(probs[r]);
      gy.push_back(target.labels()[r]);
    }
    const auto m = metrics_from_counts(confusion(gp, gy, threshold));
    GroupMetric gm{g.size, m.recall, m.precision, m.f1, std::nullopt, std::nullopt};
    if (reference && m.recall > 0.0 && m.f1 > 0.0) {
      const auto r = decreasing_rates(*reference, m);
      gm.rate_recall = r.recall;
      gm.rate_f1 = r.f1;
    }
    report.groups.push_back(gm);
  }
  return report;
}

struct SweepPoint {
  std::optional<double> lambda;  // nullopt: epoch-varying schedule

  std::string label() const { return lambda ? data::format_double(*lambda) : "epoch_varying"; }
};

/// The 19 fixed values 0.1, 0.15, ..., 1.0 followed by the epoch-varying entry.
inline std::vector<SweepPoint> default_sweep_grid() {
  std::vector<SweepPoint> grid;
  for (int i = 0; i < 19; ++i) grid.push_back({std::round((0.1 + 0.05 * i) * 100.0) / 100.0});
  grid.push_back({std::nullopt});
  return grid;
}

struct SweepRow {
  SweepPoint point;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  std::string stopping_reason;
};

inline TrainConfig config_for(const TrainConfig& base, const SweepPoint& point) {
  TrainConfig c = base;
  if (point.lambda) {
    c.loss.lambda_mode = LambdaMode::Fixed;
    c.loss.lambda_value = *point.lambda;
  } else {
    c.loss.lambda_mode = LambdaMode::EpochVarying;
  }
  return c;
}

/// One training run per grid point with a shared seed. Runs are independent
/// and execute on up to `threads` worker threads; results keep grid order.
inline std::vector<SweepRow> lambda_sweep(const DomainDataset& source_train, const DomainDataset& source_val,
                                          const DomainDataset& synthetic_target, const TrainConfig& cfg,
                                          const std::vector<SweepPoint>& grid, std::size_t threads = 0) {
  if (grid.empty()) fail(ErrorKind::InvalidArgument, "lambda_sweep: empty grid");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  auto run = [&](const SweepPoint& point) {
    auto res = train(source_train, source_val, synthetic_target, config_for(cfg, point));
    const auto& best = res.history.epochs[res.history.best_epoch];
    return SweepRow{point, best.val_loss, res.history.best_epoch, res.history.stopping_reason};
  };
  std::vector<SweepRow> rows(grid.size());
  for (std::size_t start = 0; start < grid.size(); start += threads) {
    std::vector<std::future<SweepRow>> jobs;
    for (std::size_t i = start; i < std::min(grid.size(), start + threads); ++i)
      jobs.push_back(std::async(threads == 1 ? std::launch::deferred : std::launch::async, run, grid[i]));
    for (std::size_t i = 0; i < jobs.size(); ++i) rows[start + i] = jobs[i].get();
  }
  return rows;
}

inline nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"lambda", r.point.lambda ? nlohmann::json(*r.point.lambda) : nlohmann::json("epoch_varying")},
                   {"best_val_loss", r.best_val_loss},
                   {"best_epoch", r.best_epoch},
                   {"stopping_reason", r.stopping_reason}});
  }
  return out;
}

}  // namespace tcnet::train
