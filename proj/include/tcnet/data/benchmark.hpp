#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tcnet/data/dataset.hpp"
#include "tcnet/digest.hpp"

namespace tcnet::data {

/// A planted pairwise effect u_a * u_b on the default score (numeric features only).
struct PlantedInteraction {
  std::string feature_a;
  std::string feature_b;
  double strength = 0.0;
};

struct BenchmarkConfig {
  std::size_t categorical_features = 16;
  std::size_t numeric_features = 5;
  std::size_t source_circles = 40;
  std::size_t target_circles = 80;
  std::size_t source_samples_per_circle = 100;
  std::size_t target_samples_per_circle = 10;
  double source_minority_rate = 0.13;
  double target_minority_rate = 0.11;
  double shift_intensity = 1.0;
  // Numeric columns of a shifted circle move by shift * (shift_mean * direction + shift_noise * N(0,1)).
  double shift_mean = 0.5;
  double shift_noise = 1.0;
  std::size_t latent_dim = 4;
  double circle_spread = 0.5;
  double feature_noise = 0.5;
  double label_noise = 0.5;
  std::vector<double> label_coefficients{1.5, -1.0, 0.8, 0.5};
  PlantedInteraction interaction;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(source_minority_rate > 0.0 && source_minority_rate < 1.0) ||
        !(target_minority_rate > 0.0 && target_minority_rate < 1.0))
      fail(ErrorKind::InfeasibleMinorityRate, "minority rates must lie in (0,1)");
    if (!(shift_intensity >= 0.0)) fail(ErrorKind::InvalidArgument, "shift_intensity must be >= 0");
    if (!(shift_noise >= 0.0)) fail(ErrorKind::InvalidArgument, "shift_noise must be >= 0");
    if (categorical_features + numeric_features < 2) fail(ErrorKind::InvalidArgument, "need at least 2 features");
    if (latent_dim == 0) fail(ErrorKind::InvalidArgument, "latent_dim must be positive");
    if (label_coefficients.size() != latent_dim)
      fail(ErrorKind::InvalidArgument, "label_coefficients length must equal latent_dim");
    if (source_circles == 0 || target_circles == 0 || source_samples_per_circle == 0 ||
        target_samples_per_circle == 0)
      fail(ErrorKind::InvalidArgument, "circle and sample counts must be positive");
  }
};

/// Schema used by the generator: the 21-feature credit layout for the default
/// counts, generic names otherwise.
inline TabularSchema benchmark_schema(const BenchmarkConfig& cfg) {
  if (cfg.categorical_features == 16 && cfg.numeric_features == 5) return default_credit_schema();
  std::vector<FeatureSpec> fs;
  for (std::size_t i = 0; i < cfg.categorical_features; ++i) {
    std::vector<std::string> cats;
    for (std::size_t k = 0; k < 2 + i % 4; ++k) cats.push_back("c" + std::to_string(k));
    fs.push_back(categorical("cat_" + std::to_string(i), std::move(cats)));
  }
  for (std::size_t j = 0; j < cfg.numeric_features; ++j) fs.push_back(numeric("num_" + std::to_string(j)));
  return TabularSchema(std::move(fs), "default", "circle_id");
}

namespace detail {

// Generator parameters shared by both domains.
struct BenchmarkWorld {
  struct NumericFeature {
    std::vector<double> loading;
    double offset = 0.0;
    double scale = 1.0;
    double shift_direction = 1.0;
  };
  struct CategoricalFeature {
    std::vector<std::vector<double>> weights;  // per category, per latent
    std::vector<double> bias;
    std::vector<double> shift;                 // per category logit perturbation
  };
  std::vector<NumericFeature> numeric;
  std::vector<CategoricalFeature> categorical;
};

inline BenchmarkWorld make_world(const TabularSchema& schema, const BenchmarkConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  BenchmarkWorld w;
  for (const auto& f : schema.features()) {
    if (f.categorical()) {
      BenchmarkWorld::CategoricalFeature c;
      for (std::size_t k = 0; k < f.categories.size(); ++k) {
        std::vector<double> row(cfg.latent_dim);
        for (double& v : row) v = normal(rng);
        c.weights.push_back(std::move(row));
        c.bias.push_back(0.5 * normal(rng));
        c.shift.push_back(0.5 * normal(rng));
      }
      w.categorical.push_back(std::move(c));
    } else {
      BenchmarkWorld::NumericFeature n;
      n.loading.resize(cfg.latent_dim);
      double norm = 0.0;
      for (double& v : n.loading) {
        v = normal(rng);
        norm += v * v;
      }
      for (double& v : n.loading) v /= std::sqrt(norm);
      n.offset = 20.0 + 40.0 * uniform(rng);
      n.scale = 2.0 + 4.0 * uniform(rng);
      n.shift_direction = uniform(rng) < 0.5 ? -1.0 : 1.0;
      w.numeric.push_back(std::move(n));
    }
  }
  return w;
}

inline std::vector<int> threshold_labels(const std::vector<double>& scores, double rate) {
  const auto n_pos = static_cast<std::size_t>(std::llround(rate * static_cast<double>(scores.size())));
  if (n_pos == 0 || n_pos >= scores.size()) {
    fail(ErrorKind::InfeasibleMinorityRate, "rate " + std::to_string(rate) + " over " +
                                                std::to_string(scores.size()) + " rows gives " +
                                                std::to_string(n_pos) + " positives");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<int> labels(scores.size(), 0);
  for (std::size_t i = 0; i < n_pos; ++i) labels[order[i]] = 1;
  return labels;
}

inline DomainDataset generate_domain(const std::shared_ptr<const TabularSchema>& schema, const BenchmarkWorld& world,
                                     const BenchmarkConfig& cfg, bool target) {
  const std::size_t circles = target ? cfg.target_circles : cfg.source_circles;
  const std::size_t per = target ? cfg.target_samples_per_circle : cfg.source_samples_per_circle;
  std::mt19937_64 rng(derive_seed(cfg.seed, target ? 2 : 1));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::size_t ia = schema->feature_count(), ib = schema->feature_count();
  if (cfg.interaction.strength != 0.0) {
    for (std::size_t f = 0; f < schema->feature_count(); ++f) {
      if (schema->feature(f).name == cfg.interaction.feature_a) ia = f;
      if (schema->feature(f).name == cfg.interaction.feature_b) ib = f;
    }
    if (ia == schema->feature_count() || ib == schema->feature_count() || schema->feature(ia).categorical() ||
        schema->feature(ib).categorical())
      fail(ErrorKind::InvalidArgument, "planted interaction must name two numeric features");
  }

  const std::size_t n = circles * per;
  Matrix raw(n, schema->feature_count());
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<double> z(cfg.latent_dim), mu(cfg.latent_dim);
  std::vector<double> clean(schema->feature_count());
  std::size_t r = 0;
  for (std::size_t c = 0; c < circles; ++c) {
    for (double& v : mu) v = cfg.circle_spread * normal(rng);
    // Target circles get graded shift so KL ranks them.
    const double shift = target ? cfg.shift_intensity * 2.0 * uniform(rng) : 0.0;
    char id[32];
    std::snprintf(id, sizeof(id), "%s%03zu", target ? "T" : "S", c);
    for (std::size_t i = 0; i < per; ++i, ++r) {
      for (std::size_t l = 0; l < cfg.latent_dim; ++l) z[l] = mu[l] + normal(rng);
      std::size_t ni = 0, ci = 0;
      for (std::size_t f = 0; f < schema->feature_count(); ++f) {
        const auto& spec = schema->feature(f);
        if (spec.categorical()) {
          const auto& cf = world.categorical[ci++];
          std::vector<double> logits(spec.categories.size());
          double mx = -1e300;
          for (std::size_t k = 0; k < logits.size(); ++k) {
            double s = cf.bias[k] + shift * cf.shift[k];
            for (std::size_t l = 0; l < cfg.latent_dim; ++l) s += cf.weights[k][l] * z[l];
            logits[k] = s;
            mx = std::max(mx, s);
          }
          double total = 0.0;
          for (double& v : logits) total += (v = std::exp(v - mx));
          double u = uniform(rng) * total;
          std::size_t k = 0;
          while (k + 1 < logits.size() && u >= logits[k]) u -= logits[k++];
          raw(r, f) = static_cast<double>(k);
        } else {
          const auto& nf = world.numeric[ni++];
          double s = 0.0;
          for (std::size_t l = 0; l < cfg.latent_dim; ++l) s += nf.loading[l] * z[l];
          s += cfg.feature_noise * normal(rng);
          clean[f] = s;
          s += shift * (cfg.shift_mean * nf.shift_direction + cfg.shift_noise * normal(rng));
          raw(r, f) = nf.offset + nf.scale * s;
        }
      }
      double score = cfg.label_noise * normal(rng);
      for (std::size_t l = 0; l < cfg.latent_dim; ++l) score += cfg.label_coefficients[l] * z[l];
      if (cfg.interaction.strength != 0.0) score += cfg.interaction.strength * clean[ia] * clean[ib];
      scores.push_back(score);
      ids.emplace_back(id);
    }
  }
  auto labels = threshold_labels(scores, target ? cfg.target_minority_rate : cfg.source_minority_rate);
  return DomainDataset(schema, std::move(raw), std::move(labels), std::move(ids));
}

}  // namespace detail

/// Source and target domains drawn from shared latent structure. Both are
/// labeled; target labels exist for evaluation only.
inline std::pair<DomainDataset, DomainDataset> gen_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  auto schema = std::make_shared<const TabularSchema>(benchmark_schema(cfg));
  const auto world = detail::make_world(*schema, cfg);
  auto source = detail::generate_domain(schema, world, cfg, false);
  auto target = detail::generate_domain(schema, world, cfg, true);
  return {std::move(source), std::move(target)};
}

}  // namespace tcnet::data
