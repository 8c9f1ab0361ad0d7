#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tcnet/checkpoint.hpp"
#include "tcnet/data/dataset.hpp"
#include "tcnet/model.hpp"

namespace tcnet::explain {

using data::DomainDataset;
using data::TabularSchema;

enum class InstanceFilter { All, Defaulting, NonDefaulting };

inline const char* filter_name(InstanceFilter f) {
  switch (f) {
    case InstanceFilter::All: return "all";
    case InstanceFilter::Defaulting: return "defaulting";
    case InstanceFilter::NonDefaulting: return "non_defaulting";
  }
  return "all";
}

inline InstanceFilter parse_filter(const std::string& s) {
  if (s == "all") return InstanceFilter::All;
  if (s == "defaulting") return InstanceFilter::Defaulting;
  if (s == "non_defaulting") return InstanceFilter::NonDefaulting;
  fail(ErrorKind::InvalidArgument, "unknown filter '" + s + "'");
}

/// Feature x feature mean attention scores.
struct AttentionMap {
  std::vector<std::string> features;
  Matrix matrix;
  std::string filter = "all";
  std::size_t instances = 0;

  /// Column sums: total attention each feature receives.
  std::vector<double> importance() const {
    std::vector<double> out(matrix.cols(), 0.0);
    for (std::size_t r = 0; r < matrix.rows(); ++r)
      for (std::size_t c = 0; c < matrix.cols(); ++c) out[c] += matrix(r, c);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
      auto row = matrix.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return {{"features", features},
            {"matrix", rows},
            {"aggregation", {{"heads", "mean"}, {"blocks", "mean"}, {"filter", filter}, {"instances", instances}}},
            {"importance", {{"method", "column_sum"}, {"values", importance()}}}};
  }
};

/// Head- and block-averaged attention per instance, then averaged over the
/// instances selected by the filter. `encoded` must be in the network's input space.
inline AttentionMap attention_map(const model::Network& net, const ParamStore& params, const DomainDataset& encoded,
                                  InstanceFilter filter = InstanceFilter::All, std::size_t chunk = 256) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < encoded.size(); ++r) {
    if (filter == InstanceFilter::All) {
      rows.push_back(r);
    } else {
      const int want = filter == InstanceFilter::Defaulting ? 1 : 0;
      if (encoded.labels()[r] == want) rows.push_back(r);
    }
  }
  if (rows.empty()) fail(ErrorKind::EmptySelection, std::string("no instances match filter ") + filter_name(filter));
  const std::size_t t = net.token_count();
  Matrix sum(t, t);
  const Matrix& x = encoded.encoded();
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, rows.size() - start);
    Matrix part(n, x.cols());
    for (std::size_t i = 0; i < n; ++i) std::copy(x.row(rows[start + i]).begin(), x.row(rows[start + i]).end(), part.row(i).begin());
    const auto out = model::predict(net, params, part);
    const double per = 1.0 / static_cast<double>(out.attention.size() * out.attention.front().size());
    for (std::size_t i = 0; i < n; ++i) {
      Matrix inst(t, t);
      for (const auto& block : out.attention)
        for (const auto& a : block)
          for (std::size_t r = 0; r < t; ++r)
            for (std::size_t c = 0; c < t; ++c) inst(r, c) += a(i * t + r, c);
      for (std::size_t k = 0; k < inst.size(); ++k) sum[k] += inst[k] * per;
    }
  }
  for (double& v : sum.values()) v /= static_cast<double>(rows.size());
  return {net.schema().feature_names(), std::move(sum), filter_name(filter), rows.size()};
}

inline AttentionMap attention_map(const Checkpoint& ckpt, const DomainDataset& dataset,
                                  InstanceFilter filter = InstanceFilter::All) {
  DomainDataset enc = dataset;
  data::encode_with_stats(enc, ckpt.stats);
  return attention_map(ckpt.network(), ckpt.params, enc, filter);
}

/// defaulting - non_defaulting, elementwise; positive cells are defaulting-associated.
inline Matrix attention_diff(const Matrix& defaulting, const Matrix& non_defaulting) {
  require_same_shape(defaulting, non_defaulting, "attention_diff");
  Matrix out = defaulting;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= non_defaulting[i];
  return out;
}

struct LimeConfig {
  std::size_t n_perturbations = 5000;
  double kernel_width = 0.0;  // 0: 0.75 * sqrt(encoded width)
  double categorical_resample_prob = 0.5;
  double ridge = 1.0;
  std::size_t top_k = 10;

  double resolved_kernel_width(const TabularSchema& s) const {
    return kernel_width > 0.0 ? kernel_width : 0.75 * std::sqrt(static_cast<double>(s.encoded_width()));
  }

  void validate() const {
    if (n_perturbations < 100) fail(ErrorKind::InvalidArgument, "n_perturbations must be >= 100");
    if (kernel_width < 0.0) fail(ErrorKind::InvalidArgument, "kernel_width must be positive");
    if (top_k == 0) fail(ErrorKind::InvalidArgument, "top_k must be positive");
  }

  nlohmann::json to_json(const TabularSchema& s) const {
    return {{"n_perturbations", n_perturbations}, {"kernel_width", resolved_kernel_width(s)},
            {"categorical_resample_prob", categorical_resample_prob}, {"ridge", ridge}, {"top_k", top_k}};
  }
};

/// Standardization statistics and categorical marginals of the training rows.
struct TrainingStats {
  data::EncodingStats numeric;
  std::vector<std::vector<double>> marginals;
};

/// Scores raw rows (rows x feature_count, categorical cells hold indices).
using BlackBox = std::function<std::vector<double>(const Matrix& raw_rows)>;

inline BlackBox checkpoint_black_box(const Checkpoint& ckpt) {
  return [&ckpt, net = ckpt.network()](const Matrix& raw) {
    Matrix enc(raw.rows(), ckpt.schema.encoded_width());
    for (std::size_t r = 0; r < raw.rows(); ++r) data::encode_row(ckpt.schema, ckpt.stats, raw.row(r), enc.row(r));
    return model::predict_probs(net, ckpt.params, enc);
  };
}

/// Perturbed neighbors of one instance in both raw and interpretable form.
/// Row 0 is the instance itself.
struct Neighborhood {
  Matrix raw;
  Matrix interpretable;  // numeric: standardized value; categorical: 1 if equal to the instance
  std::vector<double> weights;
  std::vector<double> scores;
};

inline Neighborhood lime_neighborhood(const TabularSchema& schema, std::span<const double> instance,
                                      const TrainingStats& stats, const LimeConfig& cfg, std::uint64_t seed,
                                      const BlackBox& black_box) {
  cfg.validate();
  if (instance.size() != schema.feature_count()) fail(ErrorKind::SchemaMismatch, "instance width differs from schema");
  const std::size_t n = cfg.n_perturbations, nf = schema.feature_count();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Neighborhood nb{Matrix(n, nf), Matrix(n, nf), std::vector<double>(n), {}};
  const double width = cfg.resolved_kernel_width(schema);
  std::vector<double> z0(nf, 0.0);
  for (std::size_t f = 0; f < nf; ++f) {
    if (schema.feature(f).categorical()) continue;
    const auto& s = stats.numeric.at(f);
    z0[f] = s.std > 0.0 ? (instance[f] - s.mean) / s.std : 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double dist2 = 0.0;
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& spec = schema.feature(f);
      if (spec.categorical()) {
        std::size_t cat = static_cast<std::size_t>(instance[f]);
        if (i > 0 && uniform(rng) < cfg.categorical_resample_prob) {
          const auto& m = stats.marginals.at(f);
          std::discrete_distribution<std::size_t> d(m.begin(), m.end());
          cat = d(rng);
        }
        nb.raw(i, f) = static_cast<double>(cat);
        const bool same = cat == static_cast<std::size_t>(instance[f]);
        nb.interpretable(i, f) = same ? 1.0 : 0.0;
        dist2 += same ? 0.0 : 1.0;
      } else {
        const auto& s = stats.numeric.at(f);
        const double z = i == 0 ? z0[f] : z0[f] + normal(rng);
        nb.raw(i, f) = s.std > 0.0 ? z * s.std + s.mean : instance[f];
        nb.interpretable(i, f) = z;
        dist2 += (z - z0[f]) * (z - z0[f]);
      }
    }
    nb.weights[i] = std::exp(-dist2 / (width * width));
  }
  bool varied = false;
  for (std::size_t i = 1; i < n && !varied; ++i)
    for (std::size_t f = 0; f < nf && !varied; ++f) varied = nb.interpretable(i, f) != nb.interpretable(0, f);
  if (!varied) fail(ErrorKind::DegeneratePerturbation, "all perturbed neighbors are identical to the instance");
  nb.scores = black_box(nb.raw);
  if (nb.scores.size() != n) fail(ErrorKind::LengthMismatch, "black box returned the wrong number of scores");
  return nb;
}

struct LinearFit {
  std::vector<double> weights;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Weighted ridge regression on the selected columns; the intercept is not penalized.
inline LinearFit weighted_ridge(const Matrix& x, std::span<const double> y, std::span<const double> w,
                                const std::vector<std::size_t>& columns, double ridge) {
  const std::size_t n = x.rows(), k = columns.size();
  double wsum = 0.0, ybar = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    wsum += w[i];
    ybar += w[i] * y[i];
  }
  if (!(wsum > 0.0)) fail(ErrorKind::DegeneratePerturbation, "all proximity weights are zero");
  ybar /= wsum;
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; })) ybar = y[0];
  Eigen::VectorXd xbar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) xbar[static_cast<Eigen::Index>(j)] += w[i] * x(i, columns[j]);
  xbar /= wsum;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  Eigen::VectorXd xi(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) xi[static_cast<Eigen::Index>(j)] = x(i, columns[j]) - xbar[static_cast<Eigen::Index>(j)];
    a.noalias() += w[i] * xi * xi.transpose();
    b.noalias() += w[i] * (y[i] - ybar) * xi;
  }
  a.diagonal().array() += ridge;
  const Eigen::VectorXd coef = a.ldlt().solve(b);

  LinearFit fit;
  fit.weights.assign(coef.data(), coef.data() + k);
  fit.intercept = ybar - coef.dot(xbar);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double pred = fit.intercept;
    for (std::size_t j = 0; j < k; ++j) pred += fit.weights[j] * x(i, columns[j]);
    ss_res += w[i] * (y[i] - pred) * (y[i] - pred);
    ss_tot += w[i] * (y[i] - ybar) * (y[i] - ybar);
  }
  if (ss_tot > 0.0) fit.r2 = 1.0 - ss_res / ss_tot;
  else fit.r2 = ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return fit;
}

struct FeatureWeight {
  std::string feature;
  std::size_t index = 0;
  double weight = 0.0;
};

struct Explanation {
  std::string instance_id;
  double probability = 0.0;
  std::vector<FeatureWeight> weights;  // sorted by |weight| descending
  double intercept = 0.0;
  double r2 = 0.0;
  double kernel_width = 0.0;
  nlohmann::json config_echo = nlohmann::json::object();

  double weight_of(const std::string& feature) const {
    for (const auto& w : weights)
      if (w.feature == feature) return w.weight;
    return 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json ws = nlohmann::json::array();
    for (const auto& w : weights) ws.push_back({{"feature", w.feature}, {"weight", w.weight}});
    return {{"instance_id", instance_id},
            {"probability", probability},
            {"weights", ws},
            {"intercept", intercept},
            {"r2", std::isfinite(r2) ? nlohmann::json(r2) : nlohmann::json(nullptr)},
            {"kernel_width", kernel_width},
            {"config_echo", config_echo}};
  }
};

/// Local surrogate: ridge on all interpretable features, keep the K largest
/// |weight| features, refit on those.
inline Explanation lime_explain(const TabularSchema& schema, std::span<const double> instance,
                                const TrainingStats& stats, const LimeConfig& cfg, std::uint64_t seed,
                                const BlackBox& black_box, std::string instance_id = "0") {
  const auto nb = lime_neighborhood(schema, instance, stats, cfg, seed, black_box);
  std::vector<std::size_t> all(schema.feature_count());
  std::iota(all.begin(), all.end(), 0);
  const auto full = weighted_ridge(nb.interpretable, nb.scores, nb.weights, all, cfg.ridge);
  std::vector<std::size_t> order = all;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(full.weights[a]) > std::abs(full.weights[b]);
  });
  order.resize(std::min(cfg.top_k, order.size()));
  std::sort(order.begin(), order.end());
  const auto fit = weighted_ridge(nb.interpretable, nb.scores, nb.weights, order, cfg.ridge);

  Explanation e;
  e.instance_id = std::move(instance_id);
  e.probability = nb.scores[0];
  for (std::size_t j = 0; j < order.size(); ++j)
    e.weights.push_back({schema.feature(order[j]).name, order[j], fit.weights[j]});
  std::stable_sort(e.weights.begin(), e.weights.end(),
                   [](const FeatureWeight& a, const FeatureWeight& b) { return std::abs(a.weight) > std::abs(b.weight); });
  e.intercept = fit.intercept;
  e.r2 = fit.r2;
  e.kernel_width = cfg.resolved_kernel_width(schema);
  e.config_echo = cfg.to_json(schema);
  e.config_echo["seed"] = seed;
  return e;
}

inline Explanation lime_explain(const Checkpoint& ckpt, std::span<const double> instance, const LimeConfig& cfg,
                                std::uint64_t seed, std::string instance_id = "0") {
  TrainingStats stats{ckpt.stats, ckpt.marginals};
  return lime_explain(ckpt.schema, instance, stats, cfg, seed, checkpoint_black_box(ckpt), std::move(instance_id));
}

}  // namespace tcnet::explain
