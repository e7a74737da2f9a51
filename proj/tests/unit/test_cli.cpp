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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "pdpsgd/cli.hpp"
#include "pdpsgd/error.hpp"

using namespace pdpsgd;
using namespace pdpsgd::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pdpsgd_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config(std::size_t epochs = 30) {
  json j = json::parse(R"({
    "dataset": {"synthetic": {"feature_dim": 8, "n": 300, "rank": 3, "seed": 1},
                "test_size": 50, "split": {"private_size": 200, "public_size": 50}},
    "model": {"family": "logistic"},
    "train": {"algorithm": "pdp_sgd", "batch_size": 50, "sigma": 1.0, "projection_dim": 3}
  })");
  j["train"]["epochs"] = epochs;
  return j;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump();
  return p;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("config parsing fills defaults and rejects unknown keys") {
  const auto cfg = parse_config(small_config());
  CHECK(cfg.train.algorithm == optim::Algorithm::kPdpSgd);
  CHECK(cfg.train.epochs == 30);
  CHECK(cfg.train.clip == 1.0);
  CHECK(cfg.output.repeat_seeds == 1);
  CHECK(cfg.dataset.split.private_size == 200);

  json bad = small_config();
  bad["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = small_config();
  bad["extra"] = 1;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = small_config();
  bad["train"]["epochs"] = "many";
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = small_config();
  bad["train"]["algorithm"] = "adam";
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = small_config();
  bad["train"]["target_epsilon"] = 1.0;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
  bad = small_config();
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);
}

TEST_CASE("null clip disables clipping and survives the echo") {
  json j = small_config();
  j["train"]["algorithm"] = "sgd";
  j["train"]["sigma"] = 0.0;
  j["train"]["clip"] = nullptr;
  const auto cfg = parse_config(j);
  CHECK(std::isinf(cfg.train.clip));
  CHECK(to_json(cfg)["train"]["clip"].is_null());
  CHECK(std::isinf(parse_config(to_json(cfg)).train.clip));
}

TEST_CASE("the resolved config is a fixed point of parse and echo") {
  const auto cfg = parse_config(small_config());
  const json echo = to_json(cfg);
  CHECK(to_json(parse_config(echo)) == echo);
  CHECK(echo["schema_version"] == kSchemaVersion);
  CHECK(echo["train"].contains("micro_batch_size"));
}

TEST_CASE("csv helpers") {
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a,b") == "\"a,b\"");
  CHECK(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_number(std::numeric_limits<double>::quiet_NaN()).empty());
  CHECK(csv_number(0.1) == "0.1");
  CHECK(std::stod(csv_number(1.0 / 3.0)) == 1.0 / 3.0);
  std::ostringstream out;
  CsvWriter w(out, {"a", "b"});
  w.row({"1", "x,y"});
  CHECK(out.str() == "a,b\r\n1,\"x,y\"\r\n");
  CHECK_THROWS_AS(w.row({"1"}), InvalidArgument);
}

TEST_CASE("accountant command") {
  AccountantArgs args{10000, 250, 30, 1e-5, 2.0, std::nullopt};
  const json out = run_accountant(args);
  CHECK(std::abs(out["epsilon"].get<double>() - 2.41) <= 0.15 * 2.41);
  CHECK(out["rdp_curve"].size() == privacy::default_orders().size());
  CHECK(out.contains("chosen_order"));
  args.sigma.reset();
  args.target_eps = 0.42;
  const double sigma = run_accountant(args)["sigma"].get<double>();
  CHECK(std::abs(sigma - 10.0) <= 2.0);
  args.sigma = 2.0;
  CHECK_THROWS_AS(run_accountant(args), ConfigError);
  args.sigma.reset();
  args.target_eps.reset();
  CHECK_THROWS_AS(run_accountant(args), ConfigError);
  const json zero = run_accountant({10000, 250, 0, 1e-5, 2.0, std::nullopt});
  CHECK(zero["epsilon"].get<double>() == 0.0);
}

TEST_CASE("guarded maps errors onto exit codes") {
  std::ostringstream err;
  CHECK(guarded([] { return 0; }, err) == kPass);
  CHECK(guarded([]() -> int { throw ConfigError("x"); }, err) == kUsage);
  CHECK(guarded([]() -> int { throw NumericError("y"); }, err) == kRuntime);
  CHECK(guarded([]() -> int { throw std::runtime_error("z"); }, err) == kRuntime);
  std::istringstream lines(err.str());
  std::string first;
  std::getline(lines, first);
  CHECK(json::parse(first)["error"]["type"] == "config");
}

TEST_CASE("train writes one metrics row per epoch") {
  const fs::path dir = scratch("train");
  const int code = cmd_train(write_config(dir, small_config(30)), {(dir / "run").string(), std::nullopt});
  CHECK(code == kPass);
  CHECK(line_count(dir / "run" / "metrics.csv") == 31);
  const json summary = json::parse(std::ifstream(dir / "run" / "summary.json"));
  CHECK(summary["ledger"]["epsilon"].get<double>() > 0.0);
  CHECK(summary["steps"] == 120);
  CHECK(fs::exists(dir / "run" / "config_echo.json"));
}

TEST_CASE("rerunning the echoed config reproduces metrics exactly") {
  const fs::path dir = scratch("echo");
  json j = small_config(4);
  j["train"].erase("sigma");
  j["train"]["target_epsilon"] = 2.0;
  cmd_train(write_config(dir, j), {(dir / "a").string(), std::nullopt});
  cmd_train(dir / "a" / "config_echo.json", {(dir / "b").string(), std::nullopt});
  std::ifstream a(dir / "a" / "metrics.csv"), b(dir / "b" / "metrics.csv");
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(!sa.empty());
  CHECK(sa == sb);
  const json summary = json::parse(std::ifstream(dir / "a" / "summary.json"));
  CHECK(summary["ledger"]["epsilon"].get<double>() <= 2.0);
  CHECK(summary["ledger"]["epsilon"].get<double>() >= 1.98);
}

TEST_CASE("repeat seeds write per-seed files and an aggregate") {
  const fs::path dir = scratch("repeat");
  cmd_train(write_config(dir, small_config(3)), {(dir / "run").string(), 3});
  for (int r = 0; r < 3; ++r) {
    CHECK(line_count(dir / "run" / ("metrics_seed" + std::to_string(r) + ".csv")) == 4);
  }
  CHECK(line_count(dir / "run" / "metrics_aggregate.csv") == 4);
  std::ifstream agg(dir / "run" / "metrics_aggregate.csv");
  std::string header;
  std::getline(agg, header);
  CHECK(header.find("test_acc_mean,test_acc_std") != std::string::npos);
}

TEST_CASE("invalid projection dimension fails before any output") {
  const fs::path dir = scratch("badk");
  json j = small_config(3);
  j["train"]["projection_dim"] = 100;
  CHECK_THROWS_AS(cmd_train(write_config(dir, j), {(dir / "run").string(), std::nullopt}), ConfigError);
  CHECK(!fs::exists(dir / "run"));
}

TEST_CASE("verify suites write csv and verdict") {
  const fs::path dir = scratch("verify");
  const json nr = run_verify("noise_reduction", json::object(), dir / "nr");
  CHECK(nr["pass"] == true);
  CHECK(nr["experiment"] == "noise_reduction");
  CHECK(fs::exists(dir / "nr" / "noise_reduction.csv"));
  CHECK(fs::exists(dir / "nr" / "verdict.json"));

  const json conc = run_verify("concentration", json{{"m_values", {50}}, {"reps", 5}}, dir / "c");
  CHECK(conc["statistics"]["slope"].is_null());
  CHECK(conc["statistics"]["per_axis"].size() == 1);

  CHECK_THROWS_AS(run_verify("nonsense", json::object(), dir / "x"), ConfigError);
  CHECK_THROWS_AS(run_verify("davis_kahan", json{{"reps", "ten"}}, dir / "y"), ConfigError);
  CHECK_THROWS_AS(run_verify("davis_kahan", json{{"unknown", 1}}, dir / "z"), ConfigError);
  CHECK_THROWS_AS(cmd_verify("nonsense", std::nullopt, (dir / "w").string()), ConfigError);
}

TEST_CASE("spectrum export") {
  const fs::path dir = scratch("spectrum");
  CHECK(cmd_spectrum(write_config(dir, small_config(2)), 5, (dir / "run").string()) == kPass);
  CHECK(line_count(dir / "run" / "spectrum.csv") > 5);
  CHECK(fs::exists(dir / "run" / "spectrum_summary.csv"));
  CHECK_THROWS_AS(cmd_spectrum(write_config(dir, small_config(2)), 51, (dir / "run2").string()), ConfigError);
}
