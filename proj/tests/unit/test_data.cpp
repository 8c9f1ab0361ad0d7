#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "tcnet/data/benchmark.hpp"
#include "tcnet/data/csv.hpp"
#include "tcnet/data/shift.hpp"
#include "tcnet/metrics.hpp"

namespace tcnet::data {
namespace {

using tcnet::testing::raises;
using tcnet::testing::toy_dataset;
using tcnet::testing::toy_schema;

TEST(Csv, QuotesEscapesAndCrlf) {
  auto t = parse_csv("\xEF\xBB\xBF" "a,b,c\r\n1,\"x,y\",\"say \"\"hi\"\"\"\r\n2,,z\n");
  ASSERT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "x,y");
  EXPECT_EQ(t.rows[0][2], "say \"hi\"");
  EXPECT_EQ(t.rows[1][1], "");
  EXPECT_EQ(t.column("c"), 2u);
  EXPECT_FALSE(t.column("d"));
}

TEST(Csv, WriteParseRoundTrip) {
  CsvTable t{{"name", "note"}, {{"a", "plain"}, {"b", "has,comma"}, {"c", "has \"quote\""}, {"d", "line\nbreak"}}};
  auto back = parse_csv(write_csv(t));
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
}

TEST(Csv, MalformedInputRaises) {
  EXPECT_TRUE(raises(ErrorKind::Format, [] { parse_csv(""); }));
  EXPECT_TRUE(raises(ErrorKind::Format, [] { parse_csv("a,b\n1\n"); }));
  EXPECT_TRUE(raises(ErrorKind::Format, [] { parse_csv("a\n\"open\n"); }));
}

TEST(Csv, DoubleFormattingRoundTrips) {
  for (double v : {0.1, -3.25e-7, 123456789.123, 1.0 / 3.0}) EXPECT_EQ(*parse_double(format_double(v)), v);
  EXPECT_FALSE(parse_double("12abc"));
  EXPECT_FALSE(parse_double(""));
}

TEST(Schema, EncodedWidthAndOffsets) {
  auto s = toy_schema();
  EXPECT_EQ(s->encoded_width(), 3u + 1 + 2 + 1 + 4);
  EXPECT_EQ(s->offset(0), 0u);
  EXPECT_EQ(s->offset(1), 3u);
  EXPECT_EQ(s->offset(2), 4u);
  EXPECT_EQ(s->offset(4), 7u);
  EXPECT_EQ(s->categorical_count(), 3u);
}

TEST(Schema, JsonRoundTripAndDigest) {
  auto s = toy_schema();
  auto back = TabularSchema::from_json(s->to_json());
  EXPECT_TRUE(back == *s);
  EXPECT_EQ(back.digest(), s->digest());
  EXPECT_EQ(s->digest().size(), 64u);
}

TEST(Schema, InvalidSchemasRaise) {
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument,
                     [] { TabularSchema({numeric("a"), numeric("a")}, "y", "c"); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [] { TabularSchema({numeric("a")}, "y", "c"); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument,
                     [] { TabularSchema({numeric("a"), categorical("b", {})}, "y", "c"); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument,
                     [] { TabularSchema({numeric("a"), categorical("b", {"x", "x"})}, "y", "c"); }));
  EXPECT_TRUE(raises(ErrorKind::Format, [] {
    TabularSchema::from_json(nlohmann::json{{"features", {{{"name", "a"}, {"kind", "ordinal"}}}},
                                            {"label_column", "y"},
                                            {"circle_column", "c"}});
  }));
}

TEST(Schema, DefaultCreditLayout) {
  auto s = default_credit_schema();
  EXPECT_EQ(s.feature_count(), 21u);
  EXPECT_EQ(s.categorical_count(), 16u);
}

TEST(Dataset, CsvLoadValidatesCells) {
  auto schema = toy_schema();
  const std::string header = "color,income,size,age,kind,label,circle\n";
  auto ok = dataset_from_csv(parse_csv(header + "red,1.5,m,30,d,1,c1\nblue,2,s,31,a,0,c2\n"), schema);
  EXPECT_EQ(ok.size(), 2u);
  EXPECT_EQ(ok.category(0, 0), 0u);
  EXPECT_EQ(ok.category(0, 4), 3u);
  EXPECT_EQ(ok.labels(), (std::vector<int>{1, 0}));
  EXPECT_EQ(ok.circle_ids()[1], "c2");

  EXPECT_TRUE(raises(ErrorKind::UnknownCategory,
                     [&] { dataset_from_csv(parse_csv(header + "pink,1,m,30,d,1,c1\n"), schema); }));
  EXPECT_TRUE(raises(ErrorKind::UnparsableNumeric,
                     [&] { dataset_from_csv(parse_csv(header + "red,abc,m,30,d,1,c1\n"), schema); }));
  EXPECT_TRUE(raises(ErrorKind::UnparsableNumeric,
                     [&] { dataset_from_csv(parse_csv(header + "red,1,m,30,d,2,c1\n"), schema); }));
  EXPECT_TRUE(raises(ErrorKind::MissingColumn,
                     [&] { dataset_from_csv(parse_csv("color,income\nred,1\n"), schema); }));
}

TEST(Dataset, UnlabeledFileFlagsMissingColumn) {
  auto d = dataset_from_csv(parse_csv("color,income,size,age,kind\nred,1,m,30,d\n"), toy_schema());
  EXPECT_FALSE(d.has_labels());
  EXPECT_TRUE(d.label_column_missing());
  EXPECT_TRUE(raises(ErrorKind::UnlabeledDataset, [&] { d.labels(); }));
  EXPECT_EQ(d.circle_ids()[0], "all");
}

TEST(Dataset, CsvSaveLoadRoundTrip) {
  auto d = toy_dataset(30, 3);
  auto back = dataset_from_csv(parse_csv(write_csv(dataset_to_csv(d))), d.schema_ptr());
  EXPECT_EQ(back.raw(), d.raw());
  EXPECT_EQ(back.labels(), d.labels());
  EXPECT_EQ(back.circle_ids(), d.circle_ids());
}

TEST(Dataset, EncodeDecodeRoundTrip) {
  auto d = toy_dataset(50, 4);
  const auto& enc = d.encoded();
  ASSERT_EQ(enc.cols(), d.schema().encoded_width());
  for (std::size_t r = 0; r < d.size(); ++r) {
    auto raw = decode_row(d.schema(), d.stats(), enc.row(r));
    for (std::size_t f = 0; f < raw.size(); ++f) EXPECT_NEAR(raw[f], d.raw()(r, f), 1e-9);
  }
  // Standardized columns: zero mean, unit population std.
  for (std::size_t f : {1u, 3u}) {
    const std::size_t c = d.schema().offset(f);
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < d.size(); ++r) mean += enc(r, c) / 50.0;
    for (std::size_t r = 0; r < d.size(); ++r) var += (enc(r, c) - mean) * (enc(r, c) - mean) / 50.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
}

TEST(Dataset, TargetEncodedInSourceSpace) {
  auto src = toy_dataset(40, 5);
  auto tgt = toy_dataset(20, 6);
  encode(tgt, &src);
  const std::size_t c = src.schema().offset(1);
  EXPECT_NEAR(tgt.encoded()(0, c), (tgt.raw()(0, 1) - src.stats()[1].mean) / src.stats()[1].std, 1e-12);
}

TEST(Dataset, ConstantNumericEncodesToZero) {
  auto schema = toy_schema();
  Matrix raw(3, 5);
  for (std::size_t r = 0; r < 3; ++r) raw(r, 1) = 7.0, raw(r, 3) = static_cast<double>(r);
  DomainDataset d(schema, raw, std::nullopt, {"a", "a", "b"});
  encode(d);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(d.encoded()(r, schema->offset(1)), 0.0);
}

TEST(Dataset, ConstructorChecks) {
  auto schema = toy_schema();
  EXPECT_TRUE(raises(ErrorKind::SchemaMismatch, [&] { DomainDataset(schema, Matrix(1, 4), std::nullopt, {"a"}); }));
  EXPECT_TRUE(raises(ErrorKind::LengthMismatch, [&] { DomainDataset(schema, Matrix(2, 5), std::nullopt, {"a"}); }));
  Matrix bad(1, 5);
  bad(0, 0) = 3.0;
  EXPECT_TRUE(raises(ErrorKind::UnknownCategory, [&] { DomainDataset(schema, bad, std::nullopt, {"a"}); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument,
                     [&] { DomainDataset(schema, Matrix(1, 5), std::vector<int>{2}, {"a"}); }));
}

TEST(Split, StratifiedDisjointAndDeterministic) {
  auto d = toy_dataset(100, 7, 0.2);
  auto [tr, va] = split_source(d, 0.8, 11);
  EXPECT_EQ(tr.size(), 80u);
  EXPECT_EQ(va.size(), 20u);
  EXPECT_EQ(tr.positive_count(), 16u);
  EXPECT_EQ(va.positive_count(), 4u);
  auto [tr2, va2] = split_source(d, 0.8, 11);
  EXPECT_EQ(tr.raw(), tr2.raw());
  auto [tr3, va3] = split_source(d, 0.8, 12);
  EXPECT_NE(tr.raw(), tr3.raw());
  std::multiset<std::vector<double>> all, parts;
  for (std::size_t r = 0; r < d.size(); ++r) all.insert({d.raw().row(r).begin(), d.raw().row(r).end()});
  for (const auto* p : {&tr, &va})
    for (std::size_t r = 0; r < p->size(); ++r) parts.insert({p->raw().row(r).begin(), p->raw().row(r).end()});
  EXPECT_EQ(all, parts);
}

TEST(Split, TooFewMinorityRaises) {
  auto d = toy_dataset(20, 8, 0.05);  // one positive
  EXPECT_TRUE(raises(ErrorKind::TooFewMinority, [&] { split_source(d, 0.8, 1); }));
  EXPECT_TRUE(raises(ErrorKind::InvalidArgument, [&] { split_source(d, 1.0, 1); }));
}

TEST(Kl, PmfOracle) {
  std::vector<double> p{0.5, 0.5}, q{0.25, 0.75};
  EXPECT_NEAR(kl_pmf(p, q), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_EQ(kl_pmf(p, p), 0.0);
  auto s = smoothed_pmf(std::vector<double>{0.0, 2.0}, 1.0);
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
}

// Two categorical features only, so the expected value is a closed form.
TEST(Kl, CategoricalDatasetOracle) {
  auto schema = std::make_shared<const TabularSchema>(
      TabularSchema({categorical("a", {"x", "y"}), categorical("b", {"u", "v", "w"})}, "label", "circle"));
  Matrix src{{0, 0}, {0, 1}, {1, 2}, {1, 2}};
  Matrix tgt{{0, 0}, {0, 0}};
  DomainDataset s(schema, src, std::nullopt, std::vector<std::string>(4, "s"));
  DomainDataset t(schema, tgt, std::nullopt, std::vector<std::string>(2, "t"));
  // add-one smoothing: feature a: P_t = (3/4, 1/4), P_s = (3/6, 3/6)
  // feature b: P_t = (3/5, 1/5, 1/5), P_s = (2/7, 2/7, 3/7)
  double expect = 0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  expect += 0.6 * std::log(0.6 / (2.0 / 7)) + 0.2 * std::log(0.2 / (2.0 / 7)) + 0.2 * std::log(0.2 / (3.0 / 7));
  EXPECT_NEAR(kl_divergence(s, t), expect, 1e-12);
  EXPECT_GE(kl_divergence(s, s), 0.0);
}

TEST(Kl, EmptySubsetRaises) {
  auto d = toy_dataset(10, 9);
  EXPECT_TRUE(raises(ErrorKind::EmptySubset, [&] { kl_divergence(d, d.subset(std::vector<std::size_t>{})); }));
}

TEST(ShiftGroups, NestedAndMonotoneOnBenchmark) {
  BenchmarkConfig cfg;
  cfg.seed = 3;
  cfg.source_samples_per_circle = 20;
  auto [source, target] = gen_benchmark(cfg);
  auto g = build_shift_groups(source, target);
  ASSERT_EQ(g.groups.size(), 6u);
  const std::vector<std::size_t> sizes{80, 60, 40, 30, 20, 10};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(g.groups[i].size, sizes[i]);
    EXPECT_EQ(g.groups[i].circle_ids.size(), sizes[i]);
    std::set<std::string> ids(g.groups[i].circle_ids.begin(), g.groups[i].circle_ids.end());
    EXPECT_EQ(ids.size(), sizes[i]);
    if (i > 0) {
      std::set<std::string> prev(g.groups[i - 1].circle_ids.begin(), g.groups[i - 1].circle_ids.end());
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), ids.begin(), ids.end()));
      EXPECT_GE(g.groups[i].mean_kl, g.groups[i - 1].mean_kl);
    }
  }
  for (std::size_t i = 1; i < g.circles.size(); ++i) EXPECT_LE(g.circles[i - 1].kl, g.circles[i].kl);
  auto back = ShiftGroups::from_json(g.to_json());
  EXPECT_EQ(back.groups.size(), 6u);
  EXPECT_EQ(back.groups[5].circle_ids, g.groups[5].circle_ids);
}

TEST(ShiftGroups, SizeBeyondCircleCountRaises) {
  auto d = toy_dataset(40, 10);  // 4 circles
  EXPECT_TRUE(raises(ErrorKind::GroupSizeExceedsCircles, [&] { build_shift_groups(d, d, {5}); }));
  EXPECT_TRUE(raises(ErrorKind::GroupSizeExceedsCircles, [&] { build_shift_groups(d, d, {0}); }));
}

TEST(DecreasingRates, TableValues) {
  MetricReport train, test;
  train.recall = 0.90;
  train.f1 = 0.90;
  test.recall = 0.67;
  test.f1 = 0.67;
  EXPECT_NEAR(decreasing_rates(train, test).recall, 0.343284, 1e-6);
  EXPECT_NEAR(decreasing_rates(train, test).f1, 0.343284, 1e-6);
  test.recall = 0.0;
  EXPECT_TRUE(raises(ErrorKind::ZeroTestingMetric, [&] { decreasing_rates(train, test); }));
}

TEST(Benchmark, SizesRatesAndCircles) {
  BenchmarkConfig cfg;
  cfg.seed = 1;
  auto [source, target] = gen_benchmark(cfg);
  EXPECT_EQ(source.size(), 4000u);
  EXPECT_EQ(target.size(), 800u);
  EXPECT_EQ(source.positive_count(), 520u);
  EXPECT_EQ(target.positive_count(), 88u);
  EXPECT_EQ(source.distinct_circles().size(), 40u);
  EXPECT_EQ(target.distinct_circles().size(), 80u);
  EXPECT_EQ(source.schema().feature_count(), 21u);
  EXPECT_EQ(source.schema().categorical_count(), 16u);
}

TEST(Benchmark, DeterministicPerSeed) {
  BenchmarkConfig cfg;
  cfg.source_circles = 4;
  cfg.target_circles = 8;
  cfg.seed = 5;
  auto a = gen_benchmark(cfg);
  auto b = gen_benchmark(cfg);
  EXPECT_EQ(a.first.raw(), b.first.raw());
  EXPECT_EQ(a.second.raw(), b.second.raw());
  EXPECT_EQ(a.second.labels(), b.second.labels());
  cfg.seed = 6;
  EXPECT_NE(gen_benchmark(cfg).first.raw(), a.first.raw());
}

TEST(Benchmark, ShiftIntensityMovesTargetAway) {
  BenchmarkConfig cfg;
  cfg.seed = 2;
  cfg.source_samples_per_circle = 20;
  cfg.shift_intensity = 0.0;
  auto [s0, t0] = gen_benchmark(cfg);
  cfg.shift_intensity = 1.5;
  auto [s1, t1] = gen_benchmark(cfg);
  EXPECT_GT(kl_divergence(s1, t1), kl_divergence(s0, t0));
}

TEST(Benchmark, InfeasibleRateRaises) {
  BenchmarkConfig cfg;
  cfg.target_minority_rate = 0.0;
  EXPECT_TRUE(raises(ErrorKind::InfeasibleMinorityRate, [&] { gen_benchmark(cfg); }));
  cfg = BenchmarkConfig{};
  cfg.target_circles = 1;
  cfg.target_samples_per_circle = 3;
  EXPECT_TRUE(raises(ErrorKind::InfeasibleMinorityRate, [&] { gen_benchmark(cfg); }));
}

}  // namespace
}  // namespace tcnet::data
