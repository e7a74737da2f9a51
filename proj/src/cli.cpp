// Copyright 2026 The pdpsgd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pdpsgd/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "pdpsgd/error.hpp"
#include "pdpsgd/privacy.hpp"
#include "pdpsgd/subspace.hpp"

namespace pdpsgd::cli {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  // null maps to nullopt.
  std::optional<double> get_optional(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    if (!j_.at(key).is_number()) throw ConfigError(path_ + "." + key + ": expected a number");
    return j_.at(key).get<double>();
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename T>
void require(bool ok, const std::string& message) {
  if (!ok) throw T(message);
}

std::filesystem::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

std::filesystem::path resolve_dir(const std::optional<std::string>& flag,
                                  const std::string& configured,
                                  const std::string& fallback_name) {
  if (flag && !flag->empty()) return *flag;
  if (!configured.empty()) {
    std::filesystem::path p(configured);
    return p.is_absolute() ? p : output_root() / p;
  }
  return output_root() / fallback_name;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

optim::Seeds offset_seeds(optim::Seeds s, std::uint64_t r) {
  s.init += r;
  s.subsample += r;
  s.noise += r;
  s.projection += r;
  return s;
}

void write_checkpoints(const std::filesystem::path& dir, const optim::TrainResult& result) {
  std::filesystem::create_directories(dir);
  for (const auto& cp : result.checkpoints) {
    std::ofstream out(dir / ("step_" + std::to_string(cp.step) + ".bin"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(cp.params.values.data()),
              static_cast<std::streamsize>(cp.params.values.size() * sizeof(double)));
  }
}

double metric_value(const optim::EpochMetrics& m, std::size_t column) {
  switch (column) {
    case 0: return static_cast<double>(m.epoch);
    case 1: return m.train_loss;
    case 2: return m.train_acc;
    case 3: return m.test_loss;
    case 4: return m.test_acc;
    case 5: return m.grad_norm;
    case 6: return m.principal_grad_norm;
    case 7: return m.eigen_gap;
    case 8: return m.epsilon_so_far;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

optim::TrainResult run_training(const ExperimentConfig& cfg, const LoadedData& d,
                                const optim::Seeds& seeds) {
  optim::TrainConfig tc = cfg.train;
  tc.seeds = seeds;
  return optim::train(tc, cfg.model, d.private_set, &d.public_set,
                      d.test_set.size() ? &d.test_set : nullptr);
}

// Resolves target_epsilon into sigma, once the private size is known.
void resolve_sigma(ExperimentConfig& cfg, std::size_t n) {
  if (!cfg.target_epsilon) return;
  const std::uint64_t steps =
      static_cast<std::uint64_t>(optim::steps_per_epoch(n, cfg.train.batch_size)) *
      cfg.train.epochs;
  const double q = std::min(1.0, static_cast<double>(cfg.train.batch_size) / static_cast<double>(n));
  cfg.train.sigma = privacy::calibrate_sigma(*cfg.target_epsilon, cfg.train.delta, q, steps);
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "config");
  const int version = root.get<int>("schema_version", kSchemaVersion);
  if (version != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));

  {
    Section ds = root.sub("dataset");
    cfg.dataset.source = ds.get<std::string>("source", cfg.dataset.source);
    if (cfg.dataset.source != "synthetic" && cfg.dataset.source != "idx")
      throw ConfigError("config.dataset.source must be 'synthetic' or 'idx'");
    Section idx = ds.sub("idx");
    cfg.dataset.idx.train_images = idx.get<std::string>("train_images", "");
    cfg.dataset.idx.train_labels = idx.get<std::string>("train_labels", "");
    cfg.dataset.idx.test_images = idx.get<std::string>("test_images", "");
    cfg.dataset.idx.test_labels = idx.get<std::string>("test_labels", "");
    idx.finish();
    Section syn = ds.sub("synthetic");
    auto& s = cfg.dataset.synthetic;
    s.feature_dim = syn.get<std::size_t>("feature_dim", s.feature_dim);
    s.n = syn.get<std::size_t>("n", s.n);
    s.rank = syn.get<std::size_t>("rank", s.rank);
    s.label_noise = syn.get<double>("label_noise", s.label_noise);
    s.class_count = syn.get<int>("class_count", s.class_count);
    s.seed = syn.get<std::uint64_t>("seed", s.seed);
    syn.finish();
    cfg.dataset.test_size = ds.get<std::size_t>("test_size", cfg.dataset.test_size);
    Section split = ds.sub("split");
    cfg.dataset.split.private_size =
        split.get<std::size_t>("private_size", cfg.dataset.split.private_size);
    cfg.dataset.split.public_size =
        split.get<std::size_t>("public_size", cfg.dataset.split.public_size);
    cfg.dataset.split.seed = split.get<std::uint64_t>("seed", cfg.dataset.split.seed);
    split.finish();
    ds.finish();
  }
  {
    Section m = root.sub("model");
    cfg.model.family = models::parse_family(m.get<std::string>("family", "softmax_linear"));
    cfg.model.input_dim = m.get<std::size_t>("input_dim", 0);
    cfg.model.class_count = m.get<int>("class_count", 0);
    cfg.model.hidden_widths =
        m.get<std::vector<std::size_t>>("hidden_widths", cfg.model.hidden_widths);
    cfg.model.activation = m.get<std::string>("activation", cfg.model.activation);
    cfg.model.bias = m.get<bool>("bias", cfg.model.bias);
    cfg.model.init_scale = m.get<double>("init_scale", cfg.model.init_scale);
    m.finish();
  }
  {
    Section t = root.sub("train");
    auto& tc = cfg.train;
    tc.algorithm = optim::parse_algorithm(t.get<std::string>("algorithm", "dp_sgd"));
    tc.epochs = t.get<std::size_t>("epochs", tc.epochs);
    tc.batch_size = t.get<std::size_t>("batch_size", tc.batch_size);
    tc.schedule = optim::parse_schedule(t.get<std::string>("schedule", "constant"));
    tc.step_size = t.get<double>("step_size", tc.step_size);
    if (t.has("clip")) {
      const auto clip = t.get_optional("clip");
      tc.clip = clip ? *clip : std::numeric_limits<double>::infinity();
    } else {
      t.get_optional("clip");
    }
    tc.sigma = t.get<double>("sigma", tc.sigma);
    cfg.target_epsilon = t.get_optional("target_epsilon");
    tc.delta = t.get<double>("delta", tc.delta);
    tc.projection_dim = t.get<std::size_t>("projection_dim", tc.projection_dim);
    tc.projection_update_every =
        t.get<std::size_t>("projection_update_every", tc.projection_update_every);
    tc.projection_start_epoch =
        t.get<std::size_t>("projection_start_epoch", tc.projection_start_epoch);
    tc.micro_batch_size = t.get<std::size_t>("micro_batch_size", tc.micro_batch_size);
    tc.ball_radius = t.get_optional("ball_radius");
    tc.sampling = optim::parse_sampling(t.get<std::string>("sampling", "with_replacement"));
    Section seeds = t.sub("seeds");
    tc.seeds.init = seeds.get<std::uint64_t>("init", tc.seeds.init);
    tc.seeds.subsample = seeds.get<std::uint64_t>("subsample", tc.seeds.subsample);
    tc.seeds.noise = seeds.get<std::uint64_t>("noise", tc.seeds.noise);
    tc.seeds.projection = seeds.get<std::uint64_t>("projection", tc.seeds.projection);
    seeds.finish();
    tc.checkpoint_every = t.get<std::size_t>("checkpoint_every", tc.checkpoint_every);
    tc.checkpoint_capacity = t.get<std::size_t>("checkpoint_capacity", tc.checkpoint_capacity);
    tc.evaluate_each_epoch = t.get<bool>("evaluate_each_epoch", tc.evaluate_each_epoch);
    t.finish();
    if (cfg.target_epsilon && tc.sigma != 0.0)
      throw ConfigError("config.train: give either sigma or target_epsilon, not both");
  }
  {
    Section o = root.sub("output");
    cfg.output.directory = o.get<std::string>("directory", cfg.output.directory);
    cfg.output.csv = o.get<bool>("csv", cfg.output.csv);
    cfg.output.json = o.get<bool>("json", cfg.output.json);
    cfg.output.checkpoints = o.get<bool>("checkpoints", cfg.output.checkpoints);
    cfg.output.repeat_seeds = o.get<std::size_t>("repeat_seeds", cfg.output.repeat_seeds);
    if (cfg.output.repeat_seeds == 0) throw ConfigError("config.output.repeat_seeds must be >= 1");
    o.finish();
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.dataset.synthetic;
  const auto& tc = cfg.train;
  json train = {
      {"algorithm", optim::algorithm_name(tc.algorithm)},
      {"epochs", tc.epochs},
      {"batch_size", tc.batch_size},
      {"schedule", optim::schedule_name(tc.schedule)},
      {"step_size", tc.step_size},
      {"clip", number_or_null(tc.clip)},
      {"sigma", tc.sigma},
      {"target_epsilon", cfg.target_epsilon ? json(*cfg.target_epsilon) : json(nullptr)},
      {"delta", tc.delta},
      {"projection_dim", tc.projection_dim},
      {"projection_update_every", tc.projection_update_every},
      {"projection_start_epoch", tc.projection_start_epoch},
      {"micro_batch_size", tc.micro_batch_size},
      {"ball_radius", tc.ball_radius ? json(*tc.ball_radius) : json(nullptr)},
      {"sampling", optim::sampling_name(tc.sampling)},
      {"seeds",
       {{"init", tc.seeds.init},
        {"subsample", tc.seeds.subsample},
        {"noise", tc.seeds.noise},
        {"projection", tc.seeds.projection}}},
      {"checkpoint_every", tc.checkpoint_every},
      {"checkpoint_capacity", tc.checkpoint_capacity},
      {"evaluate_each_epoch", tc.evaluate_each_epoch}};
  // sigma was derived from target_epsilon; drop it so the echo reparses.
  if (cfg.target_epsilon) train["sigma"] = 0.0;
  return {
      {"schema_version", kSchemaVersion},
      {"dataset",
       {{"source", cfg.dataset.source},
        {"idx",
         {{"train_images", cfg.dataset.idx.train_images},
          {"train_labels", cfg.dataset.idx.train_labels},
          {"test_images", cfg.dataset.idx.test_images},
          {"test_labels", cfg.dataset.idx.test_labels}}},
        {"synthetic",
         {{"feature_dim", s.feature_dim},
          {"n", s.n},
          {"rank", s.rank},
          {"label_noise", s.label_noise},
          {"class_count", s.class_count},
          {"seed", s.seed}}},
        {"test_size", cfg.dataset.test_size},
        {"split",
         {{"private_size", cfg.dataset.split.private_size},
          {"public_size", cfg.dataset.split.public_size},
          {"seed", cfg.dataset.split.seed}}}}},
      {"model",
       {{"family", models::family_name(cfg.model.family)},
        {"input_dim", cfg.model.input_dim},
        {"class_count", cfg.model.class_count},
        {"hidden_widths", cfg.model.hidden_widths},
        {"activation", cfg.model.activation},
        {"bias", cfg.model.bias},
        {"init_scale", cfg.model.init_scale}}},
      {"train", train},
      {"output",
       {{"directory", cfg.output.directory},
        {"csv", cfg.output.csv},
        {"json", cfg.output.json},
        {"checkpoints", cfg.output.checkpoints},
        {"repeat_seeds", cfg.output.repeat_seeds}}}};
}

LoadedData load_data(ExperimentConfig& cfg) {
  LoadedData d;
  data::Dataset source;
  if (cfg.dataset.source == "idx") {
    require<ConfigError>(!cfg.dataset.idx.train_images.empty() &&
                             !cfg.dataset.idx.train_labels.empty(),
                         "config.dataset.idx: train_images and train_labels are required");
    source = data::load_idx(cfg.dataset.idx.train_images, cfg.dataset.idx.train_labels);
  } else {
    source = data::synthetic_lowrank(cfg.dataset.synthetic).dataset;
  }
  const data::SplitIndices split = data::split_indices(source.size(), cfg.dataset.split);
  d.private_set = data::subset(source, split.private_indices);
  d.public_set = data::subset(source, split.public_indices);

  if (cfg.dataset.source == "idx" && !cfg.dataset.idx.test_images.empty()) {
    d.test_set = data::load_idx(cfg.dataset.idx.test_images, cfg.dataset.idx.test_labels);
  } else if (cfg.dataset.source == "synthetic" && cfg.dataset.test_size > 0) {
    d.test_set = data::synthetic_resample(cfg.dataset.synthetic, cfg.dataset.test_size,
                                          cfg.dataset.synthetic.seed + 0x7e57);
  } else if (cfg.dataset.test_size > 0 && !split.remainder.empty()) {
    const std::size_t take = std::min(cfg.dataset.test_size, split.remainder.size());
    d.test_set = data::subset(source, std::span(split.remainder).first(take));
  }
  if (cfg.model.input_dim == 0) cfg.model.input_dim = source.feature_dim();
  if (cfg.model.class_count == 0) cfg.model.class_count = source.class_count;
  if (d.test_set.size()) d.test_set.class_count = cfg.model.class_count;
  resolve_sigma(cfg, d.private_set.size());
  return d;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> header)
    : out_(out), width_(header.size()) {
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_) throw InvalidArgument("csv: row width mismatch");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << csv_escape(fields[i]);
  }
  out_ << "\r\n";
}

void write_metrics_csv(std::ostream& out, const std::vector<optim::EpochMetrics>& rows) {
  CsvWriter w(out, metrics_header());
  for (const auto& m : rows) {
    std::vector<std::string> fields;
    for (std::size_t c = 0; c < metrics_header().size(); ++c)
      fields.push_back(c == 0 ? std::to_string(m.epoch) : csv_number(metric_value(m, c)));
    w.row(fields);
  }
}

json ledger_json(const privacy::PrivacyLedger& ledger) {
  json curve = json::array();
  for (const auto& pt : ledger.rdp_curve) curve.push_back({{"order", pt.order}, {"rdp", pt.epsilon}});
  return {{"epsilon", ledger.epsilon},
          {"sigma", ledger.config.sigma},
          {"q", ledger.config.q},
          {"steps", ledger.config.steps},
          {"delta", ledger.config.delta},
          {"chosen_order", ledger.chosen_order},
          {"rdp_curve", curve}};
}

json summary_json(const optim::TrainResult& result) {
  json final_metrics = json::object();
  if (!result.per_epoch.empty()) {
    const auto& m = result.per_epoch.back();
    final_metrics = {{"epoch", m.epoch},
                     {"train_loss", number_or_null(m.train_loss)},
                     {"train_acc", number_or_null(m.train_acc)},
                     {"test_loss", number_or_null(m.test_loss)},
                     {"test_acc", number_or_null(m.test_acc)},
                     {"grad_norm", number_or_null(m.grad_norm)},
                     {"principal_grad_norm", number_or_null(m.principal_grad_norm)},
                     {"eigen_gap", number_or_null(m.eigen_gap)},
                     {"subspace_refresh_count", m.subspace_refresh_count}};
  }
  json steps = json::array();
  for (const auto& cp : result.checkpoints) steps.push_back(cp.step);
  return {{"schema_version", kSchemaVersion},
          {"steps", result.steps},
          {"final", final_metrics},
          {"final_param_norm", result.final_params.values.norm()},
          {"gap_degenerate_refreshes", result.gap_degenerate_refreshes},
          {"checkpoint_steps", steps},
          {"ledger", result.ledger ? ledger_json(*result.ledger) : json(nullptr)}};
}

void write_concentration_csv(std::ostream& out, const verify::ScalingReport& r) {
  CsvWriter w(out, {"m", "replicate", "error_norm"});
  for (std::size_t i = 0; i < r.axis.size(); ++i)
    for (std::size_t k = 0; k < r.replicates[i].size(); ++k)
      w.row({csv_number(r.axis[i]), std::to_string(k), csv_number(r.replicates[i][k])});
}

json verdict_json(const verify::ScalingReport& r) {
  json per_axis = json::array();
  for (std::size_t i = 0; i < r.axis.size(); ++i)
    per_axis.push_back({{r.axis_name, r.axis[i]},
                        {"mean", r.stats[i].mean},
                        {"median", r.stats[i].median},
                        {"stderr", r.stats[i].std_error},
                        {"replicates", r.stats[i].count}});
  return {{"experiment", r.experiment},
          {"pass", r.pass},
          {"statistics",
           {{"per_axis", per_axis},
            {"slope", r.slope ? json(*r.slope) : json(nullptr)},
            {"slope_range", {r.slope_low, r.slope_high}}}}};
}

void write_davis_kahan_csv(std::ostream& out, const verify::DavisKahanReport& r) {
  CsvWriter w(out, {"m", "replicate", "distance", "error_norm", "bound", "conditional",
                    "satisfied"});
  for (const auto& row : r.rows)
    w.row({std::to_string(row.m), std::to_string(row.replicate), csv_number(row.distance),
           csv_number(row.error_norm), csv_number(row.bound), row.conditional ? "1" : "0",
           row.satisfied ? "1" : "0"});
}

json verdict_json(const verify::DavisKahanReport& r) {
  return {{"experiment", "davis_kahan"},
          {"pass", r.pass},
          {"statistics",
           {{"k", r.k},
            {"gap", r.gap},
            {"m_values", r.m_values},
            {"median_distance", r.median_distance},
            {"shrink_ratios", r.shrink_ratios},
            {"ratio_range", {r.ratio_low, r.ratio_high}},
            {"conditional_count", r.conditional_count},
            {"violations", r.violations}}}};
}

json verdict_json(const verify::NoiseReductionReport& r) {
  return {{"experiment", "noise_reduction"},
          {"pass", r.pass},
          {"statistics",
           {{"p", r.p},
            {"k", r.k},
            {"draws", r.draws},
            {"mean_projected_energy", r.mean_projected_energy},
            {"mean_full_energy", r.mean_full_energy},
            {"ratio", r.ratio},
            {"expected", r.expected},
            {"relative_error", r.relative_error},
            {"tolerance", r.tolerance}}}};
}

void write_convergence_csv(std::ostream& out, const verify::ConvergenceTable& t) {
  CsvWriter w(out, {"algorithm", "epsilon", "sigma", "seed", "final_loss", "excess_risk"});
  for (const auto& r : t.rows)
    w.row({optim::algorithm_name(r.algorithm), csv_number(r.epsilon), csv_number(r.sigma),
           std::to_string(r.seed), csv_number(r.final_loss), csv_number(r.excess_risk)});
}

int cmd_train(const std::filesystem::path& config_path, const TrainOptions& opts) {
  ExperimentConfig cfg = load_config(config_path);
  if (opts.repeat_seeds) cfg.output.repeat_seeds = *opts.repeat_seeds;
  require<ConfigError>(cfg.output.repeat_seeds >= 1, "repeat_seeds must be >= 1");
  const LoadedData d = load_data(cfg);
  optim::validate(cfg.train, cfg.model, d.private_set, &d.public_set);

  const auto dir = resolve_dir(opts.out_dir, cfg.output.directory, "train");
  std::filesystem::create_directories(dir);
  write_json_file(dir / "config_echo.json", to_json(cfg));

  const std::size_t reps = cfg.output.repeat_seeds;
  std::vector<optim::TrainResult> results;
  for (std::size_t r = 0; r < reps; ++r) {
    results.push_back(run_training(cfg, d, offset_seeds(cfg.train.seeds, r)));
    const std::string suffix = reps == 1 ? "" : "_seed" + std::to_string(r);
    if (cfg.output.csv) {
      auto out = open_out(dir / ("metrics" + suffix + ".csv"));
      write_metrics_csv(out, results.back().per_epoch);
    }
    if (cfg.output.json) write_json_file(dir / ("summary" + suffix + ".json"), summary_json(results.back()));
    if (cfg.output.checkpoints) write_checkpoints(dir / ("checkpoints" + suffix), results.back());
  }

  if (reps > 1) {
    std::vector<std::string> header{"epoch"};
    for (std::size_t c = 1; c < metrics_header().size(); ++c) {
      header.push_back(metrics_header()[c] + "_mean");
      header.push_back(metrics_header()[c] + "_std");
    }
    auto out = open_out(dir / "metrics_aggregate.csv");
    CsvWriter w(out, header);
    for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
      std::vector<std::string> fields{std::to_string(e + 1)};
      for (std::size_t c = 1; c < metrics_header().size(); ++c) {
        std::vector<double> vals;
        for (const auto& res : results) vals.push_back(metric_value(res.per_epoch[e], c));
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        fields.push_back(csv_number(mean));
        fields.push_back(csv_number(std::sqrt(var / static_cast<double>(vals.size()))));
      }
      w.row(fields);
    }
  }
  std::cout << json{{"status", "ok"}, {"directory", dir.string()}, {"runs", reps}}.dump() << "\n";
  return kPass;
}

json run_accountant(const AccountantArgs& args) {
  if (args.sigma.has_value() == args.target_eps.has_value())
    throw ConfigError("accountant: give exactly one of --sigma or --target-eps");
  require<ConfigError>(args.n >= 1 && args.batch >= 1 && args.batch <= args.n,
                       "accountant: need 1 <= batch <= n");
  require<ConfigError>(args.epochs >= 0, "accountant: epochs must be >= 0");
  const auto n = static_cast<std::size_t>(args.n);
  const auto batch = static_cast<std::size_t>(args.batch);
  const std::uint64_t steps = static_cast<std::uint64_t>(
      std::llround(args.epochs * static_cast<double>(optim::steps_per_epoch(n, batch))));
  const double q = args.batch / args.n;
  double sigma;
  if (args.sigma) {
    sigma = *args.sigma;
  } else {
    sigma = privacy::calibrate_sigma(*args.target_eps, args.delta, q, steps);
    if (steps == 0) sigma = 1.0;  // any sigma spends nothing
  }
  const privacy::PrivacyLedger ledger = privacy::compose_and_convert({q, sigma, steps, args.delta});
  json out = ledger_json(ledger);
  out["n"] = args.n;
  out["batch"] = args.batch;
  out["epochs"] = args.epochs;
  if (args.target_eps) out["target_epsilon"] = *args.target_eps;
  return out;
}

int cmd_accountant(const AccountantArgs& args, std::ostream& out) {
  out << run_accountant(args).dump(2) << "\n";
  return kPass;
}

json error_json(const std::string& type, const std::string& message) {
  return {{"error", {{"type", type}, {"message", message}}}};
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << error_json("config", e.what()).dump() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    err << error_json("invalid_argument", e.what()).dump() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << error_json("runtime", e.what()).dump() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    err << error_json("runtime", e.what()).dump() << "\n";
    return kRuntime;
  }
}

namespace {

std::vector<std::uint64_t> default_seeds(std::size_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::size_t i = 0; i < count; ++i) s[i] = i;
  return s;
}

json verify_concentration(Section& c, const std::filesystem::path& dir) {
  const auto p = c.get<Eigen::Index>("p", 200);
  const auto rank = c.get<Eigen::Index>("rank", 10);
  const auto m_values = c.get<std::vector<std::size_t>>("m_values", {25, 100, 400});
  const auto reps = c.get<std::size_t>("reps", 50);
  const auto seed = c.get<std::uint64_t>("seed", 0);
  const auto lo = c.get<double>("slope_low", -0.65);
  const auto hi = c.get<double>("slope_high", -0.35);
  c.finish();
  const auto source = verify::spiked_source(p, rank, 1.0, 0.0, seed);
  const auto report = verify::concentration_experiment(source, m_values, reps, seed, lo, hi);
  auto out = open_out(dir / "concentration.csv");
  write_concentration_csv(out, report);
  return verdict_json(report);
}

json verify_davis_kahan(Section& c, const std::filesystem::path& dir) {
  const auto p = c.get<Eigen::Index>("p", 100);
  const auto k = c.get<Eigen::Index>("k", 5);
  const auto top = c.get<double>("top_eigenvalue", 1.05);
  const auto bulk = c.get<double>("bulk_eigenvalue", 0.05);
  const auto m_values = c.get<std::vector<std::size_t>>("m_values", {200});
  const auto reps = c.get<std::size_t>("reps", 200);
  const auto seed = c.get<std::uint64_t>("seed", 0);
  c.finish();
  const auto source = verify::spiked_source(p, k, top, bulk, seed);
  const auto report = verify::davis_kahan_check(source, k, m_values, reps, seed);
  auto out = open_out(dir / "davis_kahan.csv");
  write_davis_kahan_csv(out, report);
  return verdict_json(report);
}

json verify_noise_reduction(Section& c, const std::filesystem::path& dir) {
  const auto p = c.get<Eigen::Index>("p", 1000);
  const auto k = c.get<Eigen::Index>("k", 50);
  const auto draws = c.get<std::size_t>("draws", 2000);
  const auto noise_std = c.get<double>("noise_std", 1.0);
  const auto seed = c.get<std::uint64_t>("seed", 0);
  const auto tol = c.get<double>("tolerance", 0.05);
  c.finish();
  const auto sub = subspace::random_projection(p, k, seed);
  const auto report = verify::noise_reduction(sub, draws, noise_std, seed + 1, tol);
  auto out = open_out(dir / "noise_reduction.csv");
  CsvWriter w(out, {"p", "k", "draws", "ratio", "expected", "relative_error"});
  w.row({std::to_string(report.p), std::to_string(report.k), std::to_string(report.draws),
         csv_number(report.ratio), csv_number(report.expected),
         csv_number(report.relative_error)});
  return verdict_json(report);
}

json verify_convergence(Section& c, const std::filesystem::path& dir) {
  verify::ConvexProblem problem;
  problem.synthetic = {500, 2000, 5, 0.1, 2, 0};
  Section syn = c.sub("synthetic");
  problem.synthetic.feature_dim = syn.get<std::size_t>("feature_dim", problem.synthetic.feature_dim);
  problem.synthetic.n = syn.get<std::size_t>("n", problem.synthetic.n);
  problem.synthetic.rank = syn.get<std::size_t>("rank", problem.synthetic.rank);
  problem.synthetic.label_noise = syn.get<double>("label_noise", problem.synthetic.label_noise);
  problem.synthetic.seed = syn.get<std::uint64_t>("seed", problem.synthetic.seed);
  syn.finish();
  problem.public_size = c.get<std::size_t>("public_size", problem.public_size);
  problem.public_seed = c.get<std::uint64_t>("public_seed", problem.public_seed);
  problem.epochs = c.get<std::size_t>("epochs", problem.epochs);
  problem.batch_size = c.get<std::size_t>("batch_size", problem.batch_size);
  problem.step_scale = c.get<double>("step_scale", problem.step_scale);
  problem.clip = c.get<double>("clip", problem.clip);
  problem.delta = c.get<double>("delta", problem.delta);
  problem.ball_radius = c.get<double>("ball_radius", problem.ball_radius);
  problem.projection_dim = c.get<std::size_t>("projection_dim", problem.projection_dim);
  const auto epsilons = c.get<std::vector<double>>("epsilons", {0.3});
  const auto seeds = c.get<std::vector<std::uint64_t>>("seeds", default_seeds(5));
  const auto margin = c.get<double>("margin", kConvergenceMargin);
  const auto include_random = c.get<bool>("include_rpdp", true);
  c.finish();

  std::vector<optim::Algorithm> algs = {optim::Algorithm::kDpSgd, optim::Algorithm::kPdpSgd};
  if (include_random) algs.push_back(optim::Algorithm::kRpdpSgd);
  const auto table = verify::convergence_comparison(problem, epsilons, algs, seeds);
  auto out = open_out(dir / "convergence.csv");
  write_convergence_csv(out, table);

  bool pass = true;
  json per_eps = json::array();
  for (double eps : epsilons) {
    const auto dp = table.stats(optim::Algorithm::kDpSgd, eps);
    const auto pdp = table.stats(optim::Algorithm::kPdpSgd, eps);
    // PDP must beat DP by the margin; the random-subspace variant is only logged.
    bool every_seed = true;
    for (std::uint64_t seed : seeds) {
      double dp_risk = 0.0, pdp_risk = 0.0;
      for (const auto& r : table.rows) {
        if (r.epsilon != eps || r.seed != seed) continue;
        if (r.algorithm == optim::Algorithm::kDpSgd) dp_risk = r.excess_risk;
        if (r.algorithm == optim::Algorithm::kPdpSgd) pdp_risk = r.excess_risk;
      }
      every_seed = every_seed && pdp_risk < dp_risk;
    }
    const bool ok = pdp.mean < margin * dp.mean && every_seed;
    pass = pass && ok;
    json entry = {{"epsilon", eps},
                  {"dp_sgd_mean", dp.mean},
                  {"dp_sgd_std", dp.std_error},
                  {"pdp_sgd_mean", pdp.mean},
                  {"pdp_sgd_std", pdp.std_error},
                  {"ratio", pdp.mean / dp.mean},
                  {"pdp_below_dp_every_seed", every_seed},
                  {"pass", ok}};
    if (include_random) {
      const auto r = table.stats(optim::Algorithm::kRpdpSgd, eps);
      entry["rpdp_sgd_mean"] = r.mean;
      entry["rpdp_sgd_std"] = r.std_error;
      entry["rpdp_beats_dp_sgd"] = r.mean < dp.mean;
    }
    per_eps.push_back(entry);
  }
  return {{"experiment", "convergence"},
          {"pass", pass},
          {"statistics",
           {{"optimum_loss", table.optimum_loss}, {"margin", margin}, {"per_epsilon", per_eps}}}};
}

json verify_geometry(Section& c, const std::filesystem::path& dir) {
  data::SyntheticSpec syn{20, 1200, 20, 0.05, 3, 0};
  syn.feature_dim = c.get<std::size_t>("feature_dim", syn.feature_dim);
  syn.n = c.get<std::size_t>("n", syn.n);
  syn.class_count = c.get<int>("class_count", syn.class_count);
  syn.rank = std::min(syn.rank, syn.feature_dim);
  const auto hidden = c.get<std::vector<std::size_t>>("hidden_widths", {16});
  const auto public_size = c.get<std::size_t>("public_size", 100);
  const auto oracle_size = c.get<std::size_t>("oracle_size", 1000);
  const auto k = c.get<Eigen::Index>("k", 10);
  const auto epochs = c.get<std::size_t>("epochs", 3);
  const auto width_draws = c.get<std::size_t>("width_draws", 1000);
  const auto seed = c.get<std::uint64_t>("seed", 0);
  c.finish();
  syn.seed = seed;

  const auto problem = data::synthetic_lowrank(syn);
  const auto parts = data::split_public_private(problem.dataset, {syn.n - public_size, public_size, seed});
  const auto oracle = data::synthetic_resample(syn, oracle_size, seed + 1);

  models::ModelSpec spec;
  spec.family = models::Family::kMlp;
  spec.input_dim = syn.feature_dim;
  spec.class_count = syn.class_count;
  spec.hidden_widths = hidden;
  optim::TrainConfig tc;
  tc.algorithm = optim::Algorithm::kDpSgd;
  tc.epochs = epochs;
  tc.batch_size = 50;
  tc.step_size = 0.1;
  tc.clip = 1.0;
  tc.sigma = 1.0;
  tc.checkpoint_every = optim::steps_per_epoch(parts.private_set.size(), tc.batch_size);
  tc.seeds = {seed, seed + 1, seed + 2, seed + 3};
  const auto run = optim::train(tc, spec, parts.private_set, &parts.public_set, nullptr);

  const auto top = static_cast<Eigen::Index>(public_size);
  const auto trace = verify::spectrum_trace(spec, run.checkpoints, parts.public_set, top, k);
  const auto dominance = verify::principal_dominance(spec, run.checkpoints, parts.private_set, oracle, k);
  const Vector full_grad = models::mean_gradient(spec, run.final_params, parts.private_set);
  const auto geometry = verify::coordinate_decay(full_grad);
  const auto public_grads = models::per_example_gradients(spec, run.final_params, parts.public_set);
  const auto width = verify::gaussian_width_estimate(public_grads.grads, width_draws, seed);

  bool descending = true;
  double worst_trace_rel = 0.0;
  {
    auto out = open_out(dir / "spectrum.csv");
    CsvWriter w(out, {"step", "index", "eigenvalue"});
    for (const auto& row : trace.rows) {
      const auto& ev = row.spectrum.top_eigenvalues;
      double sum = 0.0;
      for (std::size_t i = 0; i < ev.size(); ++i) {
        w.row({std::to_string(row.step), std::to_string(i + 1), csv_number(ev[i])});
        if (i && ev[i] > ev[i - 1]) descending = false;
        sum += ev[i];
      }
      const double rel = std::abs(sum - row.spectrum.trace) / std::max(row.spectrum.trace, 1e-300);
      worst_trace_rel = std::max(worst_trace_rel, rel);
    }
  }
  {
    auto out = open_out(dir / "coordinates.csv");
    CsvWriter w(out, {"rank", "abs_value"});
    for (std::size_t j = 0; j < geometry.sorted_abs_coordinates.size(); ++j)
      w.row({std::to_string(j + 1), csv_number(geometry.sorted_abs_coordinates[j])});
  }
  {
    auto out = open_out(dir / "dominance.csv");
    CsvWriter w(out, {"step", "ratio", "gradient_norm"});
    for (const auto& pt : dominance.points)
      w.row({std::to_string(pt.step),
             pt.ratio ? csv_number(*pt.ratio) : std::string(), csv_number(pt.gradient_norm)});
  }
  bool sorted = std::is_sorted(geometry.sorted_abs_coordinates.rbegin(),
                               geometry.sorted_abs_coordinates.rend());
  const bool finite = std::isfinite(geometry.decay_exponent) &&
                      std::isfinite(geometry.decay_constant) && std::isfinite(width.mean);
  const bool pass = descending && sorted && finite && worst_trace_rel <= 1e-8;
  return {{"experiment", "geometry"},
          {"pass", pass},
          {"statistics",
           {{"decay_exponent", geometry.decay_exponent},
            {"decay_constant", geometry.decay_constant},
            {"gaussian_width", width.mean},
            {"gaussian_width_stderr", width.std_error},
            {"dominance_average", dominance.average ? json(*dominance.average) : json(nullptr)},
            {"inverse_gap_sq_mean", number_or_null(trace.inverse_gap_sq_mean)},
            {"eigenvalues_descending", descending},
            {"coordinates_sorted", sorted},
            {"trace_relative_error", worst_trace_rel}}}};
}

}  // namespace

json run_verify(const std::string& suite, const json& config, const std::filesystem::path& out_dir) {
  Section c(config, "verify." + suite);
  std::filesystem::create_directories(out_dir);
  json verdict;
  if (suite == "concentration") {
    verdict = verify_concentration(c, out_dir);
  } else if (suite == "davis_kahan") {
    verdict = verify_davis_kahan(c, out_dir);
  } else if (suite == "noise_reduction") {
    verdict = verify_noise_reduction(c, out_dir);
  } else if (suite == "convergence") {
    verdict = verify_convergence(c, out_dir);
  } else if (suite == "geometry") {
    verdict = verify_geometry(c, out_dir);
  } else {
    throw ConfigError("unknown verify suite '" + suite + "'");
  }
  verdict["schema_version"] = kSchemaVersion;
  write_json_file(out_dir / "verdict.json", verdict);
  return verdict;
}

int cmd_verify(const std::string& suite, const std::optional<std::filesystem::path>& config,
               const std::optional<std::string>& out_dir) {
  if (std::find(verify_suites().begin(), verify_suites().end(), suite) == verify_suites().end())
    throw ConfigError("unknown verify suite '" + suite + "'");
  json cfg = json::object();
  if (config) {
    std::ifstream in(*config);
    if (!in) throw ConfigError("cannot open config " + config->string());
    try {
      cfg = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(e.what());
    }
  }
  const auto dir = resolve_dir(out_dir, "", "verify_" + suite);
  const json verdict = run_verify(suite, cfg, dir);
  std::cout << verdict.dump() << "\n";
  return verdict.at("pass").get<bool>() ? kPass : kAssertionFailed;
}

int cmd_spectrum(const std::filesystem::path& config_path, std::size_t top,
                 const std::optional<std::string>& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  const LoadedData d = load_data(cfg);
  optim::validate(cfg.train, cfg.model, d.private_set, &d.public_set);
  require<ConfigError>(top >= 1 && top <= d.public_set.size(),
                       "spectrum: top must be between 1 and the public set size");
  if (cfg.train.checkpoint_every == 0)
    cfg.train.checkpoint_every = optim::steps_per_epoch(d.private_set.size(), cfg.train.batch_size);

  const auto dir = resolve_dir(out_dir, cfg.output.directory, "spectrum");
  std::filesystem::create_directories(dir);
  write_json_file(dir / "config_echo.json", to_json(cfg));

  const auto run = run_training(cfg, d, cfg.train.seeds);
  const Eigen::Index k = std::max<Eigen::Index>(
      1, std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.train.projection_dim),
                                static_cast<Eigen::Index>(top) - 1));
  const auto trace = verify::spectrum_trace(cfg.model, run.checkpoints, d.public_set,
                                            static_cast<Eigen::Index>(top), k);
  {
    auto out = open_out(dir / "spectrum.csv");
    CsvWriter w(out, {"step", "index", "eigenvalue"});
    for (const auto& row : trace.rows)
      for (std::size_t i = 0; i < row.spectrum.top_eigenvalues.size(); ++i)
        w.row({std::to_string(row.step), std::to_string(i + 1),
               csv_number(row.spectrum.top_eigenvalues[i])});
  }
  {
    auto out = open_out(dir / "spectrum_summary.csv");
    CsvWriter w(out, {"step", "trace", "eigen_gap_at_k", "gap_degenerate", "lambda1_over_last"});
    for (const auto& row : trace.rows) {
      const auto& ev = row.spectrum.top_eigenvalues;
      const double ratio = ev.empty() || ev.back() <= 1e-12 * ev.front()
                               ? std::numeric_limits<double>::quiet_NaN()
                               : ev.front() / ev.back();
      w.row({std::to_string(row.step), csv_number(row.spectrum.trace),
             csv_number(row.spectrum.eigen_gap_at_k), row.spectrum.gap_degenerate ? "1" : "0",
             csv_number(ratio)});
    }
  }
  std::cout << json{{"status", "ok"}, {"directory", dir.string()}, {"checkpoints", trace.rows.size()}}.dump()
            << "\n";
  return kPass;
}

}  // namespace pdpsgd::cli
