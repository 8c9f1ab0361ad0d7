#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "tcnet/data/benchmark.hpp"
#include "tcnet/data/shift.hpp"
#include "tcnet/metrics.hpp"
#include "tcnet/oversample.hpp"
#include "tcnet/train.hpp"

namespace tcnet::train {
namespace {

using tcnet::testing::raises;
using tcnet::testing::toy_dataset;

TrainConfig tiny_config() {
  TrainConfig c;
  c.max_epochs = 3;
  c.batch_size = 16;
  c.seed = 4;
  c.model.d_model = 4;
  c.model.heads = 2;
  c.model.ffn_hidden = 8;
  c.model.trunk_widths = {8, 8, 4, 4, 4};
  return c;
}

struct Toy {
  DomainDataset train, val, synth;
};

Toy toy_splits() {
  auto src = toy_dataset(60, 1, 0.3);
  auto tgt = toy_dataset(40, 2);
  auto p = prepare_training_data(src, tgt.without_labels(), 0.8, 3);
  return {p.train, p.val, p.synthetic};
}

TEST(LearningRate, ExponentialDecay) {
  TrainConfig c;
  EXPECT_EQ(learning_rate(c, 0), 0.1);
  EXPECT_NEAR(learning_rate(c, 1), 0.096, 1e-15);
  EXPECT_NEAR(learning_rate(c, 10), 0.1 * std::pow(0.96, 10), 1e-15);
}

TEST(TrainConfig, Validation) {
  auto c = tiny_config();
  c.max_epochs = 0;
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { c.validate(); }));
  c = tiny_config();
  c.batch_size = 1;
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { c.validate(); }));
  c = tiny_config();
  c.lr_decay_gamma = 1.5;
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { c.validate(); }));
}

TEST(Sgd, PlainAndMomentumUpdates) {
  ParamStore p, g, v;
  p.add("w", Matrix{{1.0, 2.0}});
  g.add("w", Matrix{{0.5, -1.0}});
  v.add("w", Matrix{{0.2, 0.2}});
  ParamStore q = p;
  sgd_update(q, g, 0.1, 0.0, nullptr);
  EXPECT_DOUBLE_EQ(q.at("w")[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(q.at("w")[1], 2.0 + 0.1);
  sgd_update(p, g, 0.1, 0.9, &v);
  EXPECT_DOUBLE_EQ(v.at("w")[0], 0.9 * 0.2 + 0.5);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 1.0 - 0.1 * (0.9 * 0.2 + 0.5));
}

TEST(Sgd, SmallStepDecreasesLoss) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  model::Network net(t.train.schema(), cfg.model);
  auto xs = t.train.encoded(), xt = t.synth.encoded();
  std::vector<std::size_t> rows(16);
  std::iota(rows.begin(), rows.end(), 0);
  Matrix bs = detail::gather_rows(xs, rows), bt = detail::gather_rows(xt, rows);
  auto y_all = t.train.labels_as_double();
  std::vector<double> y(y_all.begin(), y_all.begin() + 16);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore p = model::init_params(t.train.schema(), cfg.model, seed);
    auto before = compute_step(net, p, bs, y, bt, 5, 10, cfg.loss);
    sgd_update(p, before.grads, 1e-4, 0.0, nullptr);
    auto after = compute_step(net, p, bs, y, bt, 5, 10, cfg.loss);
    EXPECT_LT(after.loss.total, before.loss.total) << "init seed " << seed;
  }
}

TEST(Train, OneEpochRecordsOneEpoch) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  cfg.max_epochs = 1;
  auto res = train(t.train, t.val, t.synth, cfg);
  ASSERT_EQ(res.history.epochs.size(), 1u);
  EXPECT_EQ(res.history.epochs[0].lambda, 1.0);
  EXPECT_EQ(res.history.epochs[0].lr, 0.1);
  EXPECT_EQ(res.history.stopping_reason, "max_epochs");
  EXPECT_TRUE(std::isfinite(res.history.epochs[0].val_loss));
}

TEST(Train, DeterministicForSeed) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  auto a = train(t.train, t.val, t.synth, cfg);
  auto b = train(t.train, t.val, t.synth, cfg);
  EXPECT_EQ(a.checkpoint.serialize(), b.checkpoint.serialize());
  cfg.seed = 5;
  auto c = train(t.train, t.val, t.synth, cfg);
  EXPECT_NE(a.checkpoint.serialize(), c.checkpoint.serialize());
}

TEST(Train, ReturnsBestValidationEpoch) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  cfg.max_epochs = 40;
  cfg.early_stop_patience = 2;
  cfg.initial_lr = 0.5;
  auto res = train(t.train, t.val, t.synth, cfg);
  const auto& h = res.history;
  double best = 1e300;
  std::size_t arg = 0;
  for (const auto& e : h.epochs)
    if (e.val_loss < best) best = e.val_loss, arg = e.epoch;
  EXPECT_EQ(h.best_epoch, arg);
  if (h.stopping_reason == "early_stopping") {
    EXPECT_EQ(h.epochs.size(), h.best_epoch + cfg.early_stop_patience + 1);
  } else {
    EXPECT_EQ(h.epochs.size(), cfg.max_epochs);
  }
  auto v = validate_on(res.checkpoint.network(), res.checkpoint.params, t.val, cfg.loss);
  EXPECT_DOUBLE_EQ(v.loss, best);
}

TEST(Train, LambdaScheduleFollowsEpochs) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  cfg.max_epochs = 4;
  cfg.early_stop_patience = 10;
  auto res = train(t.train, t.val, t.synth, cfg);
  ASSERT_EQ(res.history.epochs.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(res.history.epochs[e].lambda, (e + 1) / 4.0);
}

TEST(Train, TargetLabelsAreNeverRead) {
  auto src = toy_dataset(60, 1, 0.3);
  auto tgt = toy_dataset(40, 2);
  auto labeled = prepare_training_data(src, tgt, 0.8, 3);
  auto unlabeled = prepare_training_data(src, tgt.without_labels(), 0.8, 3);
  auto cfg = tiny_config();
  EXPECT_EQ(train(labeled.train, labeled.val, labeled.synthetic, cfg).checkpoint.serialize(),
            train(unlabeled.train, unlabeled.val, unlabeled.synthetic, cfg).checkpoint.serialize());
}

TEST(Train, InputErrors) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  EXPECT_TRUE(raises(ErrorKind::EmptyDataset,
                     [&] { train(t.train, t.val, t.synth.subset(std::vector<std::size_t>{}), cfg); }));
  auto schema = std::make_shared<const data::TabularSchema>(
      data::TabularSchema({data::numeric("a"), data::categorical("b", {"x", "y"})}, "label", "circle"));
  DomainDataset foreign(schema, Matrix{{1, 0}, {2, 1}}, std::nullopt, {"c", "c"});
  data::encode(foreign);
  EXPECT_TRUE(raises(ErrorKind::SchemaMismatch, [&] { train(t.train, t.val, foreign, cfg); }));
}

// Brute-force confusion counts and metric formulas.
struct Oracle {
  double recall, precision, f1;
};
Oracle brute_metrics(const std::vector<double>& p, const std::vector<int>& y, double thr) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    tp += (p[i] >= thr && y[i] == 1);
    fp += (p[i] >= thr && y[i] == 0);
    fn += (p[i] < thr && y[i] == 1);
  }
  Oracle o{};
  o.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  o.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  o.f1 = o.recall + o.precision > 0 ? 2 * o.precision * o.recall / (o.precision + o.recall) : 0.0;
  return o;
}

TEST(Metrics, AgreeWithBruteForceExactly) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const double rate = u(rng);
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(rng);
      y[i] = u(rng) < rate ? 1 : 0;
    }
    const auto r = metrics_from_counts(confusion(p, y, 0.5));
    const auto o = brute_metrics(p, y, 0.5);
    EXPECT_EQ(r.recall, o.recall);
    EXPECT_EQ(r.precision, o.precision);
    EXPECT_EQ(r.f1, o.f1);
  }
}

TEST(Metrics, ZeroDenominatorConventions) {
  std::vector<double> p{0.1, 0.2};
  std::vector<int> none{0, 0}, both{1, 1};
  auto r = metrics_from_counts(confusion(p, none));
  EXPECT_TRUE(r.no_positives);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  r = metrics_from_counts(confusion(p, both));
  EXPECT_FALSE(r.no_positives);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_TRUE(raises(ErrorKind::LengthMismatch, [&] { confusion(p, std::vector<int>{1}); }));
}

TEST(Metrics, HandExample) {
  std::vector<double> p{0.9, 0.6, 0.4, 0.2, 0.5};
  std::vector<int> y{1, 0, 1, 0, 1};
  auto c = confusion(p, y);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 1u);
  auto r = metrics_from_counts(c);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
}

TEST(Metrics, RecallNonIncreasingInThreshold) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(300);
  std::vector<int> y(300);
  for (std::size_t i = 0; i < 300; ++i) p[i] = u(rng), y[i] = u(rng) < 0.3;
  double prev = 2.0;
  for (double thr = 0.01; thr < 1.0; thr += 0.01) {
    const double r = metrics_from_counts(confusion(p, y, thr)).recall;
    EXPECT_LE(r, prev);
    prev = r;
  }
}

class Evaluation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data::BenchmarkConfig b;
    b.seed = 9;
    b.source_samples_per_circle = 5;
    auto [source, target] = data::gen_benchmark(b);
    target_ = new DomainDataset(target);
    auto syn = oversample::generate_synthetic(target, 400, 1);
    auto prep = prepare_training_data(source, syn.rows(), 0.8, 2);
    auto cfg = tiny_config();
    cfg.max_epochs = 2;
    cfg.batch_size = 64;
    ckpt_ = new Checkpoint(train(prep.train, prep.val, prep.synthetic, cfg).checkpoint);
    groups_ = new data::ShiftGroups(data::build_shift_groups(source, target));
  }
  static void TearDownTestSuite() {
    delete target_;
    delete ckpt_;
    delete groups_;
  }
  static DomainDataset* target_;
  static Checkpoint* ckpt_;
  static data::ShiftGroups* groups_;
};
DomainDataset* Evaluation::target_ = nullptr;
Checkpoint* Evaluation::ckpt_ = nullptr;
data::ShiftGroups* Evaluation::groups_ = nullptr;

TEST_F(Evaluation, SixGroupRowsLargestFirst) {
  auto r = evaluate_groups(*ckpt_, *target_, *groups_);
  ASSERT_EQ(r.groups.size(), 6u);
  for (std::size_t i = 1; i < 6; ++i) EXPECT_GT(r.groups[i - 1].size, r.groups[i].size);
  EXPECT_EQ(r.groups[0].size, 80u);
}

TEST_F(Evaluation, AllCirclesGroupEqualsOverallMetrics) {
  auto overall = evaluate(*ckpt_, *target_, 0.3).report;
  auto r = evaluate_groups(*ckpt_, *target_, *groups_, std::nullopt, 0.3);
  EXPECT_EQ(r.groups[0].recall, overall.recall);
  EXPECT_EQ(r.groups[0].f1, overall.f1);
  EXPECT_EQ(r.recall, overall.recall);
}

TEST_F(Evaluation, GroupMetricsMatchSubsetEvaluation) {
  auto r = evaluate_groups(*ckpt_, *target_, *groups_, std::nullopt, 0.3);
  const auto& g = groups_->groups[5];
  auto sub = target_->subset(target_->rows_in_circles(g.circle_ids));
  auto direct = evaluate(*ckpt_, sub, 0.3).report;
  EXPECT_EQ(r.groups[5].recall, direct.recall);
  EXPECT_EQ(r.groups[5].precision, direct.precision);
}

TEST_F(Evaluation, ReferenceAttachesRates) {
  MetricReport ref;
  ref.recall = 0.9;
  ref.f1 = 0.8;
  auto r = evaluate_groups(*ckpt_, *target_, *groups_, ref, 0.2);
  for (const auto& g : r.groups) {
    if (g.recall > 0.0 && g.f1 > 0.0) {
      ASSERT_TRUE(g.rate_recall.has_value());
      EXPECT_DOUBLE_EQ(*g.rate_recall, (0.9 - g.recall) / g.recall);
    } else {
      EXPECT_FALSE(g.rate_recall.has_value());
    }
  }
}

TEST_F(Evaluation, CircleMismatchAndUnlabeledRaise) {
  data::ShiftGroups bogus = *groups_;
  bogus.groups[0].circle_ids.push_back("nowhere");
  EXPECT_TRUE(raises(ErrorKind::CircleMismatch, [&] { evaluate_groups(*ckpt_, *target_, bogus); }));
  EXPECT_TRUE(raises(ErrorKind::UnlabeledDataset, [&] { evaluate(*ckpt_, target_->without_labels()); }));
}

TEST(Sweep, DefaultGrid) {
  auto g = default_sweep_grid();
  ASSERT_EQ(g.size(), 20u);
  EXPECT_EQ(*g[0].lambda, 0.1);
  EXPECT_EQ(*g[1].lambda, 0.15);
  EXPECT_EQ(*g[18].lambda, 1.0);
  EXPECT_FALSE(g[19].lambda.has_value());
  EXPECT_EQ(g[19].label(), "epoch_varying");
}

TEST(Sweep, SingletonMatchesDirectTrainingAndThreadsAgree) {
  auto t = toy_splits();
  auto cfg = tiny_config();
  cfg.max_epochs = 2;
  std::vector<SweepPoint> grid{{0.5}, {std::nullopt}};
  auto one = lambda_sweep(t.train, t.val, t.synth, cfg, grid, 1);
  auto two = lambda_sweep(t.train, t.val, t.synth, cfg, grid, 2);
  ASSERT_EQ(one.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(one[i].best_val_loss, two[i].best_val_loss);
  auto direct = train(t.train, t.val, t.synth, config_for(cfg, grid[0]));
  EXPECT_EQ(one[0].best_val_loss, direct.history.epochs[direct.history.best_epoch].val_loss);
  auto j = sweep_to_json(one);
  EXPECT_EQ(j[0]["lambda"], 0.5);
  EXPECT_EQ(j[1]["lambda"], "epoch_varying");
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { lambda_sweep(t.train, t.val, t.synth, cfg, {}, 1); }));
}

}  // namespace
}  // namespace tcnet::train
