#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "tcnet/error.hpp"

namespace tcnet {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const noexcept { return tp + fp + fn + tn; }
};

/// Positive (defaulting) when probability >= threshold.
inline ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5) {
  if (probs.size() != labels.size()) fail(ErrorKind::LengthMismatch, "confusion: predictions vs labels");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    const bool truth = labels[i] == 1;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct GroupMetric {
  std::size_t size = 0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  std::optional<double> rate_recall;
  std::optional<double> rate_f1;
};

struct DecreasingRates {
  double recall = 0.0;
  double f1 = 0.0;
};

/// Minority-class metrics with zero-denominator conventions: recall 0 when
/// there are no positives (flagged), precision 0 with no positive predictions,
/// F1 0 when precision + recall is 0.
struct MetricReport {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  bool no_positives = false;
  std::vector<GroupMetric> groups;
  std::optional<DecreasingRates> rates;

  nlohmann::json to_json() const {
    nlohmann::json gs = nlohmann::json::array();
    for (const auto& g : groups) {
      nlohmann::json j{{"size", g.size}, {"recall", g.recall}, {"precision", g.precision}, {"f1", g.f1}};
      if (g.rate_recall) j["rate_recall"] = *g.rate_recall;
      if (g.rate_f1) j["rate_f1"] = *g.rate_f1;
      gs.push_back(std::move(j));
    }
    nlohmann::json j{{"class", "defaulting"}, {"recall", recall}, {"precision", precision},
                     {"f1", f1}, {"no_positives", no_positives}, {"groups", gs}};
    j["rates"] = rates ? nlohmann::json{{"recall", rates->recall}, {"f1", rates->f1}} : nlohmann::json(nullptr);
    return j;
  }

  static MetricReport from_json(const nlohmann::json& j) {
    try {
      MetricReport r;
      r.recall = j.at("recall").get<double>();
      r.precision = j.value("precision", 0.0);
      r.f1 = j.at("f1").get<double>();
      r.no_positives = j.value("no_positives", false);
      return r;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, std::string("metric report: ") + e.what());
    }
  }
};

inline MetricReport metrics_from_counts(const ConfusionCounts& c) {
  MetricReport r;
  r.no_positives = c.tp + c.fn == 0;
  r.recall = r.no_positives ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

/// (training - testing) / testing for recall and F1.
inline DecreasingRates decreasing_rates(const MetricReport& training, const MetricReport& testing) {
  if (testing.recall <= 0.0 || testing.f1 <= 0.0)
    fail(ErrorKind::ZeroTestingMetric, "decreasing rate undefined for zero testing recall or F1");
  return {(training.recall - testing.recall) / testing.recall, (training.f1 - testing.f1) / testing.f1};
}

}  // namespace tcnet
