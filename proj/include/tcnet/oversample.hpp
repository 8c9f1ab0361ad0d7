#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcnet/data/dataset.hpp"
#include "tcnet/digest.hpp"

namespace tcnet::oversample {

using data::DomainDataset;
using data::TabularSchema;

struct GaussianMode {
  double weight = 1.0;
  double mean = 0.0;
  double std = 1.0;
};

struct ModeEncoding {
  std::size_t mode = 0;
  double alpha = 0.0;  // (c - mean) / (4 std), clipped to [-1, 1]
};

/// Univariate Gaussian mixture used for mode-specific normalization.
class ModeNormalizer {
 public:
  static constexpr double kStdFloor = 1e-6;

  ModeNormalizer() = default;
  explicit ModeNormalizer(std::vector<GaussianMode> modes) : modes_(std::move(modes)) {}

  const std::vector<GaussianMode>& modes() const noexcept { return modes_; }
  std::size_t mode_count() const noexcept { return modes_.size(); }

  std::vector<double> responsibilities(double c) const {
    std::vector<double> logp(modes_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < modes_.size(); ++m) {
      const auto& g = modes_[m];
      const double zz = (c - g.mean) / g.std;
      logp[m] = std::log(g.weight) - std::log(g.std) - 0.5 * zz * zz;
      mx = std::max(mx, logp[m]);
    }
    double total = 0.0;
    for (double& v : logp) total += (v = std::exp(v - mx));
    for (double& v : logp) v /= total;
    return logp;
  }

  /// Assigns the most responsible mode and the within-mode scalar.
  ModeEncoding encode(double c) const {
    const auto r = responsibilities(c);
    const auto mode = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    return {mode, alpha_for(c, mode)};
  }

  double alpha_for(double c, std::size_t mode) const {
    const auto& g = modes_.at(mode);
    return std::clamp((c - g.mean) / (4.0 * g.std), -1.0, 1.0);
  }

  double decode(const ModeEncoding& e) const {
    const auto& g = modes_.at(e.mode);
    return e.alpha * 4.0 * g.std + g.mean;
  }

  /// Mode one-hot followed by alpha.
  std::vector<double> encode_vector(double c) const {
    const auto e = encode(c);
    std::vector<double> v(modes_.size() + 1, 0.0);
    v[e.mode] = 1.0;
    v.back() = e.alpha;
    return v;
  }

 private:
  std::vector<GaussianMode> modes_;
};

namespace detail {

inline double mixture_log_likelihood(std::span<const double> x, const std::vector<GaussianMode>& modes) {
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi);
  double ll = 0.0;
  for (double v : x) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) {
      const double zz = (v - modes[m].mean) / modes[m].std;
      lp[m] = std::log(modes[m].weight) - std::log(modes[m].std) - log_norm - 0.5 * zz * zz;
      mx = std::max(mx, lp[m]);
    }
    double s = 0.0;
    for (double l : lp) s += std::exp(l - mx);
    ll += mx + std::log(s);
  }
  return ll;
}

// EM for a k-component mixture with k-means++ seeded means.
inline std::vector<GaussianMode> fit_mixture(std::span<const double> x, std::size_t k, std::mt19937_64& rng,
                                             double* log_likelihood) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double global_std = std::max(std::sqrt(var / static_cast<double>(n)), ModeNormalizer::kStdFloor);

  std::vector<double> centers;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centers.push_back(x[pick(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) break;
    std::uniform_real_distribution<double> u(0.0, total);
    double t = u(rng);
    std::size_t i = 0;
    while (i + 1 < n && t >= d2[i]) t -= d2[i++];
    centers.push_back(x[i]);
  }
  std::vector<GaussianMode> modes;
  for (double c : centers) modes.push_back({1.0 / static_cast<double>(centers.size()), c, global_std});

  std::vector<double> resp(n * modes.size());
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    const std::size_t km = modes.size();
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < km; ++m) {
        const double zz = (x[i] - modes[m].mean) / modes[m].std;
        resp[i * km + m] = std::log(modes[m].weight) - std::log(modes[m].std) - 0.5 * zz * zz;
        mx = std::max(mx, resp[i * km + m]);
      }
      double s = 0.0;
      for (std::size_t m = 0; m < km; ++m) s += (resp[i * km + m] = std::exp(resp[i * km + m] - mx));
      for (std::size_t m = 0; m < km; ++m) resp[i * km + m] /= s;
    }
    for (std::size_t m = 0; m < km; ++m) {
      double nk = 0.0, mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * km + m];
        mu += resp[i * km + m] * x[i];
      }
      if (nk < 1e-12) {
        modes[m].weight = 1e-12;
        continue;
      }
      mu /= nk;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += resp[i * km + m] * (x[i] - mu) * (x[i] - mu);
      modes[m] = {nk / static_cast<double>(n), mu, std::max(std::sqrt(v / nk), ModeNormalizer::kStdFloor)};
    }
    const double ll = mixture_log_likelihood(x, modes);
    if (std::abs(ll - prev) < 1e-6) {
      prev = ll;
      break;
    }
    prev = ll;
  }
  // Drop components that lost all support.
  std::erase_if(modes, [](const GaussianMode& g) { return g.weight < 1e-9; });
  double wsum = 0.0;
  for (const auto& g : modes) wsum += g.weight;
  for (auto& g : modes) g.weight /= wsum;
  if (log_likelihood) *log_likelihood = mixture_log_likelihood(x, modes);
  return modes;
}

}  // namespace detail

/// Fits mixtures with 1..k modes by EM (100 iterations or log-likelihood change
/// below 1e-6) and keeps the one with the lowest BIC. k is reduced to the
/// number of distinct values.
inline ModeNormalizer fit_mode_normalizer(std::span<const double> values, std::size_t k, std::uint64_t seed) {
  if (values.empty()) fail(ErrorKind::EmptyColumn, "fit_mode_normalizer: no values");
  if (k == 0) fail(ErrorKind::InvalidArgument, "fit_mode_normalizer: k must be positive");
  std::set<double> distinct(values.begin(), values.end());
  k = std::min(k, distinct.size());
  if (distinct.size() == 1) {
    return ModeNormalizer({GaussianMode{1.0, values.front(), ModeNormalizer::kStdFloor}});
  }
  const double n = static_cast<double>(values.size());
  std::vector<GaussianMode> best;
  double best_bic = std::numeric_limits<double>::infinity();
  for (std::size_t kk = 1; kk <= k; ++kk) {
    std::mt19937_64 rng(derive_seed(seed, kk));
    double ll = 0.0;
    auto modes = detail::fit_mixture(values, kk, rng, &ll);
    const double free_params = 3.0 * static_cast<double>(modes.size()) - 1.0;
    const double bic = free_params * std::log(n) - 2.0 * ll;
    if (bic < best_bic) {
      best_bic = bic;
      best = std::move(modes);
    }
  }
  return ModeNormalizer(std::move(best));
}

/// One-hot over the concatenated category blocks of the categorical features.
struct ConditionalVector {
  std::size_t feature = 0;   // schema feature index
  std::size_t category = 0;
  std::size_t position = 0;  // index of the 1 within the vector
  std::size_t length = 0;

  std::vector<double> to_vector() const {
    std::vector<double> v(length, 0.0);
    v[position] = 1.0;
    return v;
  }
};

/// Selection probabilities within one categorical feature, proportional to log(1 + frequency).
inline std::vector<double> log_frequency_probabilities(const DomainDataset& target, std::size_t feature) {
  const auto& spec = target.schema().feature(feature);
  std::vector<double> counts(spec.categories.size(), 0.0);
  for (std::size_t r = 0; r < target.size(); ++r) counts[target.category(r, feature)] += 1.0;
  double total = 0.0;
  for (double& c : counts) total += (c = std::log1p(c));
  if (total > 0.0)
    for (double& c : counts) c /= total;
  return counts;
}

class ConditionalSampler {
 public:
  explicit ConditionalSampler(const DomainDataset& target) {
    const auto& s = target.schema();
    std::size_t pos = 0;
    for (std::size_t f = 0; f < s.feature_count(); ++f) {
      if (!s.feature(f).categorical()) continue;
      features_.push_back(f);
      block_offsets_.push_back(pos);
      pos += s.feature(f).categories.size();
      probs_.push_back(log_frequency_probabilities(target, f));
    }
    length_ = pos;
    if (features_.empty()) fail(ErrorKind::NoCategoricalColumns, "conditional sampling needs a categorical column");
  }

  ConditionalVector sample(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> col(0, features_.size() - 1);
    const std::size_t c = col(rng);
    std::discrete_distribution<std::size_t> cat(probs_[c].begin(), probs_[c].end());
    const std::size_t k = cat(rng);
    return {features_[c], k, block_offsets_[c] + k, length_};
  }

 private:
  std::vector<std::size_t> features_;
  std::vector<std::size_t> block_offsets_;
  std::vector<std::vector<double>> probs_;
  std::size_t length_ = 0;
};

/// Column chosen uniformly among categorical features, category by log-frequency.
inline ConditionalVector sample_conditional_vector(const DomainDataset& target, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ConditionalSampler(target).sample(rng);
}

enum class Strategy { ConditionalMixture, PassthroughBootstrap };

inline const char* strategy_name(Strategy s) {
  return s == Strategy::ConditionalMixture ? "conditional_mixture" : "passthrough_bootstrap";
}

inline Strategy parse_strategy(const std::string& name) {
  if (name == "conditional_mixture") return Strategy::ConditionalMixture;
  if (name == "passthrough_bootstrap") return Strategy::PassthroughBootstrap;
  fail(ErrorKind::InvalidArgument, "unknown oversampling strategy '" + name + "'");
}

struct SyntheticProvenance {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string source_digest;

  nlohmann::json to_json() const {
    return {{"strategy", strategy}, {"seed", seed}, {"count", count}, {"source_digest", source_digest}};
  }
};

/// Generated rows in raw form; never carries labels.
class SyntheticBatch {
 public:
  SyntheticBatch(DomainDataset rows, SyntheticProvenance provenance)
      : rows_(rows.without_labels()), provenance_(std::move(provenance)) {}

  const DomainDataset& rows() const noexcept { return rows_; }
  DomainDataset& rows() noexcept { return rows_; }
  const SyntheticProvenance& provenance() const noexcept { return provenance_; }
  std::size_t size() const noexcept { return rows_.size(); }

  [[noreturn]] const std::vector<int>& labels() const {
    fail(ErrorKind::LabelAccess, "synthetic batches carry no labels");
  }

 private:
  DomainDataset rows_;
  SyntheticProvenance provenance_;
};

/// SHA-256 over the unlabeled CSV rendering of a dataset.
inline std::string dataset_digest(const DomainDataset& d) {
  return sha256_hex(data::write_csv(data::dataset_to_csv(d, false)));
}

struct OversampleOptions {
  Strategy strategy = Strategy::ConditionalMixture;
  std::size_t modes = 5;
  double alpha_std = 0.25;
};

/// Enlarges the target sample to `count` rows. Only raw feature values are
/// read; labels are never consumed.
inline SyntheticBatch generate_synthetic(const DomainDataset& target, std::size_t count, std::uint64_t seed,
                                         const OversampleOptions& opts = {}) {
  if (target.empty()) fail(ErrorKind::EmptyTarget, "generate_synthetic: target has no rows");
  if (count == 0) fail(ErrorKind::InvalidArgument, "generate_synthetic: count must be positive");
  const auto& schema = target.schema();
  const std::size_t nf = schema.feature_count();
  const std::size_t nt = target.size();
  Matrix raw(count, nf);

  if (opts.strategy == Strategy::PassthroughBootstrap) {
    std::uniform_int_distribution<std::size_t> pick(0, nt - 1);
    for (std::size_t i = 0; i < count; ++i) {
      std::mt19937_64 rng(derive_seed(seed, i));
      const std::size_t r = pick(rng);
      std::copy(target.raw().row(r).begin(), target.raw().row(r).end(), raw.row(i).begin());
    }
  } else {
    // Per numeric column: fitted modes and each target row's responsibilities.
    std::vector<ModeNormalizer> normalizers(nf);
    std::vector<std::vector<std::vector<double>>> resp(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      if (schema.feature(f).categorical()) continue;
      std::vector<double> col(nt);
      for (std::size_t r = 0; r < nt; ++r) col[r] = target.numeric(r, f);
      normalizers[f] = fit_mode_normalizer(col, opts.modes, derive_seed(seed, 1000003 + f));
      for (std::size_t r = 0; r < nt; ++r) resp[f].push_back(normalizers[f].responsibilities(col[r]));
    }
    // Rows matching each (feature, category).
    std::vector<std::vector<std::vector<std::size_t>>> matching(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      if (!schema.feature(f).categorical()) continue;
      matching[f].resize(schema.feature(f).categories.size());
      for (std::size_t r = 0; r < nt; ++r) matching[f][target.category(r, f)].push_back(r);
    }
    const bool conditional = schema.categorical_count() > 0;
    std::optional<ConditionalSampler> sampler;
    if (conditional) sampler.emplace(target);
    std::normal_distribution<double> alpha_dist(0.0, opts.alpha_std);
    for (std::size_t i = 0; i < count; ++i) {
      std::mt19937_64 rng(derive_seed(seed, i));
      std::size_t r = 0;
      if (conditional) {
        const auto cv = sampler->sample(rng);
        const auto& rows = matching[cv.feature][cv.category];
        if (rows.empty()) {
          r = std::uniform_int_distribution<std::size_t>(0, nt - 1)(rng);
        } else {
          r = rows[std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng)];
        }
      } else {
        r = std::uniform_int_distribution<std::size_t>(0, nt - 1)(rng);
      }
      for (std::size_t f = 0; f < nf; ++f) {
        if (schema.feature(f).categorical()) {
          raw(i, f) = target.raw()(r, f);
          continue;
        }
        const auto& w = resp[f][r];
        std::discrete_distribution<std::size_t> mode_dist(w.begin(), w.end());
        const std::size_t mode = mode_dist(rng);
        const double alpha = std::clamp(alpha_dist(rng), -1.0, 1.0);
        raw(i, f) = normalizers[f].decode({mode, alpha});
      }
    }
  }
  DomainDataset rows(target.schema_ptr(), std::move(raw), std::nullopt,
                     std::vector<std::string>(count, "synthetic"));
  return SyntheticBatch(std::move(rows),
                        {strategy_name(opts.strategy), seed, count, dataset_digest(target)});
}

}  // namespace tcnet::oversample
