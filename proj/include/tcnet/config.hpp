#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcnet/data/benchmark.hpp"
#include "tcnet/data/csv.hpp"
#include "tcnet/data/shift.hpp"
#include "tcnet/digest.hpp"
#include "tcnet/explain.hpp"
#include "tcnet/oversample.hpp"
#include "tcnet/train.hpp"

namespace tcnet {

inline constexpr const char* kToolVersion = "0.1.0";

namespace config_detail {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) fail(ErrorKind::Config, "section '" + name_ + "' must be an object");
  }

  template <class T>
  Section& get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      field = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::Config, "key '" + name_ + "." + key + "' has the wrong type");
    }
    return *this;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& at(const char* key) const { return j_.at(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorKind::Config, "unknown key '" + name_ + "." + k + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

struct OversampleSettings {
  oversample::OversampleOptions options;
  std::size_t count = 0;  // 0: as many rows as the source training split
};

struct GroupSettings {
  std::vector<std::size_t> sizes = data::default_group_sizes();
  data::KlOptions kl;
};

struct LimeSettings {
  explain::LimeConfig lime;
  std::size_t instances = 5;
  double r2_threshold = 0.5;
};

struct Paths {
  std::string source, target, target_synth, out, checkpoint, data, groups, reference;
};

/// Every knob of a pipeline run. The root seed is mandatory.
struct RunConfig {
  std::uint64_t seed = 0;
  data::BenchmarkConfig benchmark;
  train::TrainConfig train;
  double threshold = 0.5;
  OversampleSettings oversample;
  GroupSettings groups;
  LimeSettings lime;
  std::size_t sweep_threads = 1;
  Paths paths;

  /// Seeds every stage from the root seed.
  void propagate_seed() {
    benchmark.seed = seed;
    train.seed = seed;
  }

  void validate() const {
    benchmark.validate();
    train.validate();
    lime.lime.validate();
    if (!(threshold > 0.0 && threshold < 1.0)) fail(ErrorKind::Config, "train.threshold must lie in (0,1)");
    if (groups.sizes.empty()) fail(ErrorKind::Config, "groups.sizes must not be empty");
    if (oversample.options.modes == 0) fail(ErrorKind::Config, "oversample.modes must be positive");
    if (sweep_threads == 0) fail(ErrorKind::Config, "sweep.threads must be positive");
  }

  nlohmann::json to_json() const {
    const auto& b = benchmark;
    const auto& t = train;
    const auto& l = lime.lime;
    return {
        {"seed", seed},
        {"benchmark",
         {{"categorical_features", b.categorical_features},
          {"numeric_features", b.numeric_features},
          {"source_circles", b.source_circles},
          {"target_circles", b.target_circles},
          {"source_samples_per_circle", b.source_samples_per_circle},
          {"target_samples_per_circle", b.target_samples_per_circle},
          {"source_minority_rate", b.source_minority_rate},
          {"target_minority_rate", b.target_minority_rate},
          {"shift_intensity", b.shift_intensity},
          {"shift_mean", b.shift_mean},
          {"shift_noise", b.shift_noise},
          {"latent_dim", b.latent_dim},
          {"circle_spread", b.circle_spread},
          {"feature_noise", b.feature_noise},
          {"label_noise", b.label_noise},
          {"label_coefficients", b.label_coefficients},
          {"interaction",
           {{"feature_a", b.interaction.feature_a},
            {"feature_b", b.interaction.feature_b},
            {"strength", b.interaction.strength}}}}},
        {"model", t.model.to_json()},
        {"loss",
         {{"minority_weight", t.loss.minority_weight},
          {"lambda_mode", t.loss.lambda_mode == LambdaMode::Fixed ? "fixed" : "epoch_varying"},
          {"lambda_value", t.loss.lambda_value},
          {"prob_clamp", t.loss.prob_clamp}}},
        {"train",
         {{"max_epochs", t.max_epochs},
          {"batch_size", t.batch_size},
          {"initial_lr", t.initial_lr},
          {"lr_decay_gamma", t.lr_decay_gamma},
          {"early_stop_patience", t.early_stop_patience},
          {"momentum", t.momentum},
          {"train_fraction", t.train_fraction},
          {"threshold", threshold}}},
        {"oversample",
         {{"strategy", oversample::strategy_name(oversample.options.strategy)},
          {"modes", oversample.options.modes},
          {"alpha_std", oversample.options.alpha_std},
          {"count", oversample.count}}},
        {"groups", {{"sizes", groups.sizes}, {"bins", groups.kl.bins}, {"smoothing", groups.kl.smoothing}}},
        {"lime",
         {{"n_perturbations", l.n_perturbations},
          {"kernel_width", l.kernel_width},
          {"categorical_resample_prob", l.categorical_resample_prob},
          {"ridge", l.ridge},
          {"top_k", l.top_k},
          {"instances", lime.instances},
          {"r2_threshold", lime.r2_threshold}}},
        {"sweep", {{"threads", sweep_threads}}},
        {"paths",
         {{"source", paths.source},
          {"target", paths.target},
          {"target_synth", paths.target_synth},
          {"out", paths.out},
          {"checkpoint", paths.checkpoint},
          {"data", paths.data},
          {"groups", paths.groups},
          {"reference", paths.reference}}}};
  }

  /// SHA-256 of the canonical effective config with paths removed, so the same
  /// settings run from different directories share a digest.
  std::string digest() const {
    auto j = to_json();
    j.erase("paths");
    return sha256_hex(j.dump());
  }

  nlohmann::json provenance() const {
    return {{"tool_version", kToolVersion}, {"seed", seed}, {"config_digest", digest()}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    using config_detail::Section;
    RunConfig c;
    Section root(j, "config");
    if (!root.has("seed")) fail(ErrorKind::Config, "config must set 'seed'");
    root.get("seed", c.seed);

    if (root.has("benchmark")) {
      auto& b = c.benchmark;
      Section s(root.at("benchmark"), "benchmark");
      s.get("categorical_features", b.categorical_features)
          .get("numeric_features", b.numeric_features)
          .get("source_circles", b.source_circles)
          .get("target_circles", b.target_circles)
          .get("source_samples_per_circle", b.source_samples_per_circle)
          .get("target_samples_per_circle", b.target_samples_per_circle)
          .get("source_minority_rate", b.source_minority_rate)
          .get("target_minority_rate", b.target_minority_rate)
          .get("shift_intensity", b.shift_intensity)
          .get("shift_mean", b.shift_mean)
          .get("shift_noise", b.shift_noise)
          .get("latent_dim", b.latent_dim)
          .get("circle_spread", b.circle_spread)
          .get("feature_noise", b.feature_noise)
          .get("label_noise", b.label_noise)
          .get("label_coefficients", b.label_coefficients);
      if (s.has("interaction")) {
        Section i(s.at("interaction"), "benchmark.interaction");
        i.get("feature_a", b.interaction.feature_a)
            .get("feature_b", b.interaction.feature_b)
            .get("strength", b.interaction.strength);
        i.finish();
      }
      s.finish();
    }
    if (root.has("model")) {
      auto& m = c.train.model;
      Section s(root.at("model"), "model");
      s.get("d_model", m.d_model)
          .get("heads", m.heads)
          .get("encoder_blocks", m.encoder_blocks)
          .get("ffn_hidden", m.ffn_hidden)
          .get("trunk_widths", m.trunk_widths)
          .get("allow_trunk_override", m.allow_trunk_override)
          .get("layer_norm_eps", m.layer_norm_eps);
      s.finish();
    }
    if (root.has("loss")) {
      auto& l = c.train.loss;
      Section s(root.at("loss"), "loss");
      std::string mode = l.lambda_mode == LambdaMode::Fixed ? "fixed" : "epoch_varying";
      s.get("minority_weight", l.minority_weight)
          .get("lambda_mode", mode)
          .get("lambda_value", l.lambda_value)
          .get("prob_clamp", l.prob_clamp);
      if (mode == "fixed") l.lambda_mode = LambdaMode::Fixed;
      else if (mode == "epoch_varying") l.lambda_mode = LambdaMode::EpochVarying;
      else fail(ErrorKind::Config, "loss.lambda_mode must be 'fixed' or 'epoch_varying'");
      s.finish();
    }
    if (root.has("train")) {
      auto& t = c.train;
      Section s(root.at("train"), "train");
      s.get("max_epochs", t.max_epochs)
          .get("batch_size", t.batch_size)
          .get("initial_lr", t.initial_lr)
          .get("lr_decay_gamma", t.lr_decay_gamma)
          .get("early_stop_patience", t.early_stop_patience)
          .get("momentum", t.momentum)
          .get("train_fraction", t.train_fraction)
          .get("threshold", c.threshold);
      s.finish();
    }
    if (root.has("oversample")) {
      Section s(root.at("oversample"), "oversample");
      std::string strategy = oversample::strategy_name(c.oversample.options.strategy);
      s.get("strategy", strategy)
          .get("modes", c.oversample.options.modes)
          .get("alpha_std", c.oversample.options.alpha_std)
          .get("count", c.oversample.count);
      try {
        c.oversample.options.strategy = oversample::parse_strategy(strategy);
      } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
      }
      s.finish();
    }
    if (root.has("groups")) {
      Section s(root.at("groups"), "groups");
      s.get("sizes", c.groups.sizes).get("bins", c.groups.kl.bins).get("smoothing", c.groups.kl.smoothing);
      s.finish();
    }
    if (root.has("lime")) {
      auto& l = c.lime;
      Section s(root.at("lime"), "lime");
      s.get("n_perturbations", l.lime.n_perturbations)
          .get("kernel_width", l.lime.kernel_width)
          .get("categorical_resample_prob", l.lime.categorical_resample_prob)
          .get("ridge", l.lime.ridge)
          .get("top_k", l.lime.top_k)
          .get("instances", l.instances)
          .get("r2_threshold", l.r2_threshold);
      s.finish();
    }
    if (root.has("sweep")) {
      Section s(root.at("sweep"), "sweep");
      s.get("threads", c.sweep_threads);
      s.finish();
    }
    if (root.has("paths")) {
      auto& p = c.paths;
      Section s(root.at("paths"), "paths");
      s.get("source", p.source)
          .get("target", p.target)
          .get("target_synth", p.target_synth)
          .get("out", p.out)
          .get("checkpoint", p.checkpoint)
          .get("data", p.data)
          .get("groups", p.groups)
          .get("reference", p.reference);
      s.finish();
    }
    root.finish();
    c.propagate_seed();
    try {
      c.validate();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Config) throw;
      fail(ErrorKind::Config, e.what());
    }
    return c;
  }

  static RunConfig parse(std::string_view text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    return from_json(j);
  }

  static RunConfig load(const std::string& path) { return parse(data::read_file(path)); }
};

}  // namespace tcnet
