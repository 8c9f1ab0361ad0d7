#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcnet/data/dataset.hpp"

namespace tcnet::data {

struct KlOptions {
  std::size_t bins = 16;
  // Pseudo-count added to every category / bin of both distributions.
  double smoothing = 1.0;
};

/// KL(p || q) for two probability vectors. Terms with p_i = 0 contribute 0.
inline double kl_pmf(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) fail(ErrorKind::LengthMismatch, "kl_pmf: pmf lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

inline std::vector<double> smoothed_pmf(std::span<const double> counts, double smoothing) {
  double total = 0.0;
  for (double c : counts) total += c + smoothing;
  std::vector<double> p(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) p[i] = total > 0.0 ? (counts[i] + smoothing) / total : 0.0;
  return p;
}

/// Sum over features of the marginal KL(target || source). Categorical
/// features use the schema's category list, numeric features share
/// equal-width bins over the pooled range of both datasets.
inline double kl_divergence(const DomainDataset& source, const DomainDataset& target,
                            const KlOptions& opts = {}) {
  if (target.empty()) fail(ErrorKind::EmptySubset, "kl_divergence: target subset has no rows");
  if (source.empty()) fail(ErrorKind::EmptySubset, "kl_divergence: source has no rows");
  if (!(source.schema() == target.schema())) fail(ErrorKind::SchemaMismatch, "kl_divergence: schemas differ");
  if (opts.bins == 0) fail(ErrorKind::InvalidArgument, "kl_divergence: bins must be positive");
  const auto& schema = source.schema();
  double total = 0.0;
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const auto& spec = schema.feature(f);
    std::vector<double> cs, ct;
    if (spec.categorical()) {
      cs.assign(spec.categories.size(), 0.0);
      ct.assign(spec.categories.size(), 0.0);
      for (std::size_t r = 0; r < source.size(); ++r) cs[source.category(r, f)] += 1.0;
      for (std::size_t r = 0; r < target.size(); ++r) ct[target.category(r, f)] += 1.0;
    } else {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t r = 0; r < source.size(); ++r) {
        lo = std::min(lo, source.numeric(r, f));
        hi = std::max(hi, source.numeric(r, f));
      }
      for (std::size_t r = 0; r < target.size(); ++r) {
        lo = std::min(lo, target.numeric(r, f));
        hi = std::max(hi, target.numeric(r, f));
      }
      if (!(hi > lo)) continue;  // one shared value: identical marginals
      const double width = (hi - lo) / static_cast<double>(opts.bins);
      auto bin = [&](double v) {
        auto b = static_cast<std::size_t>((v - lo) / width);
        return std::min(b, opts.bins - 1);
      };
      cs.assign(opts.bins, 0.0);
      ct.assign(opts.bins, 0.0);
      for (std::size_t r = 0; r < source.size(); ++r) cs[bin(source.numeric(r, f))] += 1.0;
      for (std::size_t r = 0; r < target.size(); ++r) ct[bin(target.numeric(r, f))] += 1.0;
    }
    total += kl_pmf(smoothed_pmf(ct, opts.smoothing), smoothed_pmf(cs, opts.smoothing));
  }
  return total;
}

struct CircleKl {
  std::string id;
  double kl = 0.0;
};

struct ShiftGroup {
  std::size_t size = 0;
  std::vector<std::string> circle_ids;
  double mean_kl = 0.0;
};

/// Circles ascending by KL; groups ordered largest to smallest, each holding
/// the circles with the largest KL values.
struct ShiftGroups {
  std::vector<CircleKl> circles;
  std::vector<ShiftGroup> groups;

  nlohmann::json to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : circles) cs.push_back({{"id", c.id}, {"kl", c.kl}});
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& g : groups) gs.push_back({{"size", g.size}, {"circle_ids", g.circle_ids}, {"mean_kl", g.mean_kl}});
    return {{"circles", cs}, {"groups", gs}};
  }

  static ShiftGroups from_json(const nlohmann::json& j) {
    try {
      ShiftGroups out;
      for (const auto& c : j.at("circles")) out.circles.push_back({c.at("id").get<std::string>(), c.at("kl").get<double>()});
      for (const auto& g : j.at("groups")) {
        out.groups.push_back({g.at("size").get<std::size_t>(), g.at("circle_ids").get<std::vector<std::string>>(),
                              g.at("mean_kl").get<double>()});
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, std::string("shift groups: ") + e.what());
    }
  }
};

inline const std::vector<std::size_t>& default_group_sizes() {
  static const std::vector<std::size_t> sizes{80, 60, 40, 30, 20, 10};
  return sizes;
}

inline ShiftGroups build_shift_groups(const DomainDataset& source, const DomainDataset& target,
                                      std::vector<std::size_t> group_sizes = default_group_sizes(),
                                      const KlOptions& opts = {}) {
  const auto circles = target.distinct_circles();
  if (group_sizes.empty()) fail(ErrorKind::InvalidArgument, "no group sizes given");
  for (std::size_t k : group_sizes) {
    if (k == 0 || k > circles.size()) {
      fail(ErrorKind::GroupSizeExceedsCircles,
           "group size " + std::to_string(k) + " with " + std::to_string(circles.size()) + " circles");
    }
  }
  std::vector<CircleKl> kls;
  for (const auto& c : circles) {
    const auto rows = target.rows_in_circles({c});
    kls.push_back({c, kl_divergence(source, target.subset(rows), opts)});
  }
  std::sort(kls.begin(), kls.end(), [](const CircleKl& a, const CircleKl& b) {
    return a.kl != b.kl ? a.kl < b.kl : a.id < b.id;
  });

  ShiftGroups out;
  out.circles = kls;
  std::sort(group_sizes.begin(), group_sizes.end(), std::greater<>());
  for (std::size_t k : group_sizes) {
    ShiftGroup g;
    g.size = k;
    double sum = 0.0;
    // Largest KL first; summing in that order keeps top-k means monotone.
    for (std::size_t i = 0; i < k; ++i) {
      const auto& c = kls[kls.size() - 1 - i];
      g.circle_ids.push_back(c.id);
      sum += c.kl;
    }
    g.mean_kl = sum / static_cast<double>(k);
    out.groups.push_back(std::move(g));
  }
  return out;
}

}  // namespace tcnet::data
