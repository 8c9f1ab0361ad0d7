#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcnet/config.hpp"
#include "tcnet/data/benchmark.hpp"
#include "tcnet/data/shift.hpp"
#include "tcnet/explain.hpp"
#include "tcnet/oversample.hpp"
#include "tcnet/train.hpp"

namespace tcnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Exclusive lock on an output directory, held for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".tcnet.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST)
        fail(ErrorKind::Io, "output directory " + dir.string() + " is locked (remove " + path_.string() +
                                " if no other run is active)");
      fail(ErrorKind::Io, "cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

inline fs::path parent_or_cwd(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

inline void write_json(const std::string& path, const json& j) { data::write_file(path, j.dump(2) + "\n"); }

/// The effective settings minus input/output locations.
inline json settings_of(const RunConfig& cfg) {
  auto j = cfg.to_json();
  j.erase("paths");
  return j;
}

/// CSVs cannot carry metadata, so each gets a `<file>.meta.json` sidecar.
inline void write_csv_with_sidecar(const std::string& path, const data::CsvTable& table, const json& meta) {
  data::write_file(path, data::write_csv(table));
  write_json(path + ".meta.json", meta);
}

inline std::shared_ptr<const data::TabularSchema> load_schema(const std::string& path) {
  try {
    return std::make_shared<const data::TabularSchema>(
        data::TabularSchema::from_json(json::parse(data::read_file(path))));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "schema " + path + ": " + e.what());
  }
}

/// Explicit --schema, else schema.json next to the data file.
inline std::shared_ptr<const data::TabularSchema> resolve_schema(const std::string& flag, const std::string& data_path) {
  if (!flag.empty()) return load_schema(flag);
  const fs::path sibling = parent_or_cwd(data_path) / "schema.json";
  if (fs::exists(sibling)) return load_schema(sibling.string());
  fail(ErrorKind::Config, "no --schema given and no schema.json next to " + data_path);
}

inline std::vector<std::size_t> parse_index_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      fail(ErrorKind::Config, "invalid row index '" + item + "'");
    }
  }
  return out;
}

inline std::vector<train::SweepPoint> parse_grid(const std::string& s) {
  std::vector<train::SweepPoint> grid;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "epoch_varying") {
      grid.push_back({std::nullopt});
      continue;
    }
    const auto v = data::parse_double(item);
    if (!v || *v < 0.0 || *v > 1.0)
      fail(ErrorKind::Config, "grid values must be numbers in [0,1] or 'epoch_varying', got '" + item + "'");
    grid.push_back({*v});
  }
  if (grid.empty()) fail(ErrorKind::Config, "empty --grid");
  return grid;
}

/// Flags shared by every seed-consuming subcommand.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
};

inline RunConfig load_config(const CommonFlags& f, bool seed_required) {
  RunConfig cfg;
  if (!f.config.empty()) {
    std::string text;
    try {
      text = data::read_file(f.config);
    } catch (const Error& e) {
      fail(ErrorKind::Config, e.what());
    }
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, "config " + f.config + " is not valid JSON: " + e.what());
    }
    if (f.seed && !j.contains("seed")) j["seed"] = *f.seed;
    cfg = RunConfig::from_json(j);
  } else if (f.seed || !seed_required) {
    cfg = RunConfig::from_json(json{{"seed", f.seed.value_or(0)}});
  } else {
    fail(ErrorKind::Config, "a seed is required: pass --config with a 'seed' key or --seed");
  }
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.propagate_seed();
  }
  return cfg;
}

inline void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "JSON run configuration (unknown keys are rejected)");
  sub->add_option("--seed", f.seed, "root seed; overrides the config file");
}

inline std::string pick(const std::string& flag, const std::string& from_config, const char* what) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  fail(ErrorKind::Config, std::string("missing ") + what);
}

inline json checkpoint_provenance(const Checkpoint& ckpt) {
  if (ckpt.metadata.contains("provenance")) return ckpt.metadata.at("provenance");
  return {{"tool_version", kToolVersion}, {"seed", nullptr}, {"config_digest", nullptr}};
}

// ---------------------------------------------------------------- subcommands

inline int cmd_gen_benchmark(const RunConfig& cfg, const std::string& out) {
  OutputLock lock(out);
  auto [source, target] = data::gen_benchmark(cfg.benchmark);
  const json meta{{"provenance", cfg.provenance()}, {"config", settings_of(cfg)}};
  write_csv_with_sidecar((fs::path(out) / "source.csv").string(), data::dataset_to_csv(source), meta);
  write_csv_with_sidecar((fs::path(out) / "target.csv").string(), data::dataset_to_csv(target), meta);
  json schema = source.schema().to_json();
  schema["provenance"] = cfg.provenance();
  write_json((fs::path(out) / "schema.json").string(), schema);
  std::cerr << "wrote " << source.size() << " source and " << target.size() << " target rows to " << out << "\n";
  return 0;
}

inline int cmd_oversample(const RunConfig& cfg, const std::string& target_path, const std::string& schema_flag,
                          const std::string& source_path, std::size_t count, const std::string& out) {
  auto schema = resolve_schema(schema_flag, target_path);
  const auto target = data::load_dataset(target_path, schema);
  if (count == 0) count = cfg.oversample.count;
  if (count == 0) {
    if (source_path.empty()) fail(ErrorKind::Config, "oversample needs --count or --source to size the output");
    const auto source = data::load_dataset(source_path, schema);
    count = data::split_source(source, cfg.train.train_fraction, cfg.seed).first.size();
  }
  OutputLock lock(out);
  const auto batch = oversample::generate_synthetic(target, count, derive_seed(cfg.seed, 2), cfg.oversample.options);
  const json meta{{"provenance", cfg.provenance()},
                  {"config", settings_of(cfg)},
                  {"synthetic", batch.provenance().to_json()}};
  write_csv_with_sidecar((fs::path(out) / "target_synth.csv").string(), data::dataset_to_csv(batch.rows(), false),
                         meta);
  std::cerr << "wrote " << batch.size() << " synthetic rows to " << out << "\n";
  return 0;
}

inline int cmd_group(const RunConfig& cfg, const std::string& source_path, const std::string& target_path,
                     const std::string& schema_flag, const std::string& out) {
  auto schema = resolve_schema(schema_flag, source_path);
  const auto source = data::load_dataset(source_path, schema);
  const auto target = data::load_dataset(target_path, schema);
  const auto groups = data::build_shift_groups(source, target, cfg.groups.sizes, cfg.groups.kl);
  OutputLock lock(parent_or_cwd(out));
  json j = groups.to_json();
  j["provenance"] = cfg.provenance();
  j["config"] = settings_of(cfg);
  write_json(out, j);
  std::cerr << "wrote " << groups.groups.size() << " shift groups over " << groups.circles.size() << " circles\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& source_path, const std::string& synth_path,
                     const std::string& schema_flag, const std::string& out) {
  auto schema = resolve_schema(schema_flag, source_path);
  const auto source = data::load_dataset(source_path, schema);
  const auto synth = data::load_dataset(synth_path, schema);
  const auto prepared = train::prepare_training_data(source, synth.without_labels(), cfg.train.train_fraction, cfg.seed);
  OutputLock lock(out);
  auto result = train::train(prepared.train, prepared.val, prepared.synthetic, cfg.train);
  result.checkpoint.metadata["provenance"] = cfg.provenance();
  result.checkpoint.metadata["config"] = settings_of(cfg);
  result.checkpoint.save((fs::path(out) / "model.ckpt").string());

  std::string lines;
  for (const auto& e : result.history.epochs) {
    json rec = e.to_json();
    rec["provenance"] = cfg.provenance();
    lines += rec.dump() + "\n";
  }
  data::write_file((fs::path(out) / "history.jsonl").string(), lines);

  const auto train_metrics = train::evaluate(result.checkpoint, prepared.train, cfg.threshold).report;
  const auto val_metrics = train::evaluate(result.checkpoint, prepared.val, cfg.threshold).report;
  write_json((fs::path(out) / "summary.json").string(),
             {{"provenance", cfg.provenance()},
              {"config", settings_of(cfg)},
              {"best_epoch", result.history.best_epoch},
              {"epochs_run", result.history.epochs.size()},
              {"stopping_reason", result.history.stopping_reason},
              {"training_metrics", train_metrics.to_json()},
              {"validation_metrics", val_metrics.to_json()}});
  std::cerr << "trained " << result.history.epochs.size() << " epochs (" << result.history.stopping_reason
            << "), best epoch " << result.history.best_epoch << "\n";
  return 0;
}

inline int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& groups_path,
                    const std::string& reference_path, double threshold, const std::string& out) {
  const auto ckpt = Checkpoint::load(ckpt_path);
  auto schema = std::make_shared<const data::TabularSchema>(ckpt.schema);
  const auto d = data::load_dataset(data_path, schema);
  std::optional<MetricReport> reference;
  if (!reference_path.empty()) reference = train::evaluate(ckpt, data::load_dataset(reference_path, schema), threshold).report;
  const auto overall = train::evaluate(ckpt, d, threshold);
  MetricReport report;
  if (!groups_path.empty()) {
    json gj;
    try {
      gj = json::parse(data::read_file(groups_path));
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, "groups " + groups_path + ": " + e.what());
    }
    report = train::evaluate_groups(ckpt, d, data::ShiftGroups::from_json(gj), reference, threshold);
  } else {
    report = overall.report;
    if (reference && report.recall > 0.0 && report.f1 > 0.0) report.rates = decreasing_rates(*reference, report);
  }
  json j = report.to_json();
  j["counts"] = {{"tp", overall.counts.tp}, {"fp", overall.counts.fp}, {"fn", overall.counts.fn}, {"tn", overall.counts.tn}};
  j["threshold"] = threshold;
  if (reference) j["reference"] = reference->to_json();
  j["provenance"] = checkpoint_provenance(ckpt);
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    OutputLock lock(parent_or_cwd(out));
    write_json(out, j);
  }
  return 0;
}

inline int cmd_sweep(const RunConfig& cfg, const std::string& source_path, const std::string& synth_path,
                     const std::string& schema_flag, const std::string& grid_flag, const std::string& out) {
  auto schema = resolve_schema(schema_flag, source_path);
  const auto source = data::load_dataset(source_path, schema);
  const auto synth = data::load_dataset(synth_path, schema);
  const auto prepared = train::prepare_training_data(source, synth.without_labels(), cfg.train.train_fraction, cfg.seed);
  const auto grid = grid_flag.empty() ? train::default_sweep_grid() : parse_grid(grid_flag);
  OutputLock lock(out);
  const auto rows = train::lambda_sweep(prepared.train, prepared.val, prepared.synthetic, cfg.train, grid, cfg.sweep_threads);
  write_json((fs::path(out) / "sweep.json").string(),
             {{"provenance", cfg.provenance()}, {"config", settings_of(cfg)}, {"rows", train::sweep_to_json(rows)}});
  std::cerr << "swept " << rows.size() << " grid points\n";
  return 0;
}

inline int cmd_explain(const RunConfig& cfg, const std::string& ckpt_path, const std::string& data_path,
                       const std::string& rows_flag, const std::string& out) {
  const auto ckpt = Checkpoint::load(ckpt_path);
  auto schema = std::make_shared<const data::TabularSchema>(ckpt.schema);
  const auto d = data::load_dataset(data_path, schema);
  std::vector<std::size_t> rows = parse_index_list(rows_flag);
  if (rows.empty())
    for (std::size_t r = 0; r < std::min(cfg.lime.instances, d.size()); ++r) rows.push_back(r);
  for (std::size_t r : rows)
    if (r >= d.size()) fail(ErrorKind::OutOfRange, "row " + std::to_string(r) + " beyond dataset size");
  OutputLock lock(parent_or_cwd(out));
  json list = json::array();
  std::size_t fit_ok = 0;
  for (std::size_t r : rows) {
    const auto e = explain::lime_explain(ckpt, d.raw().row(r), cfg.lime.lime, derive_seed(cfg.seed, 100 + r),
                                         std::to_string(r));
    if (e.r2 >= cfg.lime.r2_threshold) ++fit_ok;
    list.push_back(e.to_json());
  }
  write_json(out, {{"provenance", cfg.provenance()},
                   {"config", settings_of(cfg)},
                   {"explanations", list},
                   {"fidelity",
                    {{"r2_threshold", cfg.lime.r2_threshold},
                     {"fraction_at_or_above", rows.empty() ? 0.0 : static_cast<double>(fit_ok) / rows.size()}}}});
  std::cerr << "explained " << rows.size() << " instances\n";
  return 0;
}

inline int cmd_attention(const std::string& ckpt_path, const std::string& data_path, const std::string& filter,
                         const std::string& out) {
  const auto ckpt = Checkpoint::load(ckpt_path);
  auto schema = std::make_shared<const data::TabularSchema>(ckpt.schema);
  const auto d = data::load_dataset(data_path, schema);
  json j;
  if (filter == "diff") {
    const auto pos = explain::attention_map(ckpt, d, explain::InstanceFilter::Defaulting);
    const auto neg = explain::attention_map(ckpt, d, explain::InstanceFilter::NonDefaulting);
    const Matrix diff = explain::attention_diff(pos.matrix, neg.matrix);
    json m = json::array();
    for (std::size_t r = 0; r < diff.rows(); ++r) m.push_back(std::vector<double>(diff.row(r).begin(), diff.row(r).end()));
    j = {{"features", pos.features},
         {"matrix", m},
         {"aggregation", {{"heads", "mean"}, {"blocks", "mean"}, {"filter", "defaulting_minus_non_defaulting"}}}};
  } else {
    j = explain::attention_map(ckpt, d, explain::parse_filter(filter)).to_json();
  }
  j["provenance"] = checkpoint_provenance(ckpt);
  OutputLock lock(parent_or_cwd(out));
  write_json(out, j);
  return 0;
}

// ---------------------------------------------------------------- entry point

/// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
inline int run(int argc, char** argv) {
  CLI::App app{"Two-stream transformer credit-default classifier with CORAL domain alignment"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonFlags common;
  std::string out, source, target, synth, schema, ckpt, data_path, groups, reference, grid, rows, filter = "all";
  std::size_t count = 0, threads = 0;
  std::optional<std::size_t> epochs;
  std::optional<double> threshold, shift_intensity, minority_weight;
  std::string lambda;

  auto* gen = app.add_subcommand("gen-benchmark", "Generate the synthetic multi-circle source/target benchmark");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--shift-intensity", shift_intensity, "target shift intensity");

  auto* over = app.add_subcommand("oversample", "Enlarge the target sample with synthetic unlabeled rows");
  add_common(over, common);
  over->add_option("--target", target, "target CSV")->required();
  over->add_option("--schema", schema, "schema JSON (default: schema.json next to the data)");
  over->add_option("--source", source, "source CSV, used to size the output like the training split");
  over->add_option("--count", count, "number of synthetic rows");
  over->add_option("--out", out, "output directory")->required();

  auto* grp = app.add_subcommand("group", "Rank target circles by KL divergence and build nested shift groups");
  add_common(grp, common);
  grp->add_option("--source", source, "source CSV")->required();
  grp->add_option("--target", target, "target CSV")->required();
  grp->add_option("--schema", schema, "schema JSON");
  grp->add_option("--out", out, "output groups JSON file")->required();

  auto* trn = app.add_subcommand("train", "Train on labeled source plus synthetic target rows");
  add_common(trn, common);
  trn->add_option("--source", source, "labeled source CSV");
  trn->add_option("--target-synth", synth, "synthetic target CSV");
  trn->add_option("--schema", schema, "schema JSON");
  trn->add_option("--out", out, "output run directory");
  trn->add_option("--epochs", epochs, "maximum epochs");
  trn->add_option("--lambda", lambda, "fixed CORAL weight in [0,1] or 'epoch_varying'");
  trn->add_option("--minority-weight", minority_weight, "loss weight of the defaulting class");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint, optionally per shift group");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data_path, "labeled CSV")->required();
  ev->add_option("--groups", groups, "shift groups JSON");
  ev->add_option("--reference", reference, "labeled training CSV for decreasing rates");
  ev->add_option("--threshold", threshold, "decision threshold (default 0.5)");
  ev->add_option("--out", out, "metrics JSON file (default: standard output)");

  auto* swp = app.add_subcommand("sweep", "Train once per CORAL weight and tabulate validation loss");
  add_common(swp, common);
  swp->add_option("--source", source, "labeled source CSV");
  swp->add_option("--target-synth", synth, "synthetic target CSV");
  swp->add_option("--schema", schema, "schema JSON");
  swp->add_option("--grid", grid, "comma-separated lambdas and/or 'epoch_varying' (default 0.1..1 step 0.05 + epoch_varying)");
  swp->add_option("--threads", threads, "parallel training jobs");
  swp->add_option("--epochs", epochs, "maximum epochs per run");
  swp->add_option("--out", out, "output directory");

  auto* exp = app.add_subcommand("explain", "Local surrogate explanations for selected rows");
  add_common(exp, common);
  exp->add_option("--checkpoint", ckpt, "checkpoint file");
  exp->add_option("--data", data_path, "CSV with rows to explain");
  exp->add_option("--rows", rows, "comma-separated row indices (default: the first lime.instances rows)");
  exp->add_option("--out", out, "explanations JSON file")->required();

  auto* att = app.add_subcommand("attention", "Export a mean feature x feature attention map");
  att->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  att->add_option("--data", data_path, "CSV (labeled unless --filter all)")->required();
  att->add_option("--filter", filter, "all | defaulting | non_defaulting | diff")
      ->check(CLI::IsMember({"all", "defaulting", "non_defaulting", "diff"}));
  att->add_option("--out", out, "attention map JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load_config(common, true);
      if (shift_intensity) cfg.benchmark.shift_intensity = *shift_intensity;
      cfg.benchmark.validate();
      return cmd_gen_benchmark(cfg, out);
    }
    if (over->parsed()) return cmd_oversample(load_config(common, true), target, schema, source, count, out);
    if (grp->parsed()) return cmd_group(load_config(common, false), source, target, schema, out);
    if (trn->parsed() || swp->parsed()) {
      auto cfg = load_config(common, true);
      if (epochs) cfg.train.max_epochs = *epochs;
      if (minority_weight) cfg.train.loss.minority_weight = *minority_weight;
      if (!lambda.empty()) {
        if (lambda == "epoch_varying") {
          cfg.train.loss.lambda_mode = LambdaMode::EpochVarying;
        } else {
          const auto v = data::parse_double(lambda);
          if (!v) fail(ErrorKind::Config, "--lambda must be a number or 'epoch_varying'");
          cfg.train.loss.lambda_mode = LambdaMode::Fixed;
          cfg.train.loss.lambda_value = *v;
        }
      }
      if (threads) cfg.sweep_threads = threads;
      try {
        cfg.validate();
      } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
      }
      const auto src = pick(source, cfg.paths.source, "--source");
      const auto syn = pick(synth, cfg.paths.target_synth, "--target-synth");
      const auto dir = pick(out, cfg.paths.out, "--out");
      if (trn->parsed()) return cmd_train(cfg, src, syn, schema, dir);
      return cmd_sweep(cfg, src, syn, schema, grid, dir);
    }
    if (ev->parsed()) return cmd_eval(ckpt, data_path, groups, reference, threshold.value_or(0.5), out);
    if (exp->parsed()) {
      auto cfg = load_config(common, true);
      return cmd_explain(cfg, pick(ckpt, cfg.paths.checkpoint, "--checkpoint"), pick(data_path, cfg.paths.data, "--data"),
                         rows, out);
    }
    if (att->parsed()) return cmd_attention(ckpt, data_path, filter, out);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return e.kind() == ErrorKind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace tcnet::cli
