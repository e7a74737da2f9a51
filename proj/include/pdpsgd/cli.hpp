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

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdpsgd/data.hpp"
#include "pdpsgd/models.hpp"
#include "pdpsgd/optimizers.hpp"
#include "pdpsgd/verify.hpp"

namespace pdpsgd::cli {

inline constexpr int kSchemaVersion = 1;

// PDP-SGD must reach this fraction of DP-SGD excess risk in the convergence suite.
inline constexpr double kConvergenceMargin = 0.6;

// Process exit codes.
enum ExitCode : int { kPass = 0, kAssertionFailed = 1, kUsage = 2, kRuntime = 3 };

// Default output root when a config gives no directory.
inline constexpr const char* kOutputRootEnv = "PDPSGD_OUTPUT_ROOT";

struct IdxSource {
  std::string train_images;
  std::string train_labels;
  std::string test_images;  // optional
  std::string test_labels;  // optional
};

struct DatasetSection {
  std::string source = "synthetic";  // "synthetic" | "idx"
  IdxSource idx;
  data::SyntheticSpec synthetic{50, 1000, 5, 0.0, 2, 0};
  std::size_t test_size = 500;
  data::SplitSpec split{800, 100, 0};
};

struct OutputSection {
  std::string directory;
  bool csv = true;
  bool json = true;
  bool checkpoints = false;
  std::size_t repeat_seeds = 1;
};

struct ExperimentConfig {
  DatasetSection dataset;
  models::ModelSpec model;
  optim::TrainConfig train;
  std::optional<double> target_epsilon;  // calibrates train.sigma when set
  OutputSection output;
};

// Strict parse: unknown keys and wrong types raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// Fully resolved configuration, defaults included.
nlohmann::json to_json(const ExperimentConfig& cfg);

struct LoadedData {
  data::Dataset private_set;
  data::Dataset public_set;
  data::Dataset test_set;
};

// Builds private/public/test sets; fills model.input_dim and class_count
// when they are left at zero.
LoadedData load_data(ExperimentConfig& cfg);

// RFC 4180 field quoting.
std::string csv_escape(const std::string& field);
// Shortest round-trip decimal; NaN becomes an empty field.
std::string csv_number(double v);

class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
  std::size_t width_;
};

inline const std::vector<std::string>& metrics_header() {
  static const std::vector<std::string> header = {
      "epoch",     "train_loss", "train_acc",           "test_loss", "test_acc",
      "grad_norm", "principal_grad_norm", "eigen_gap", "epsilon_so_far"};
  return header;
}

void write_metrics_csv(std::ostream& out, const std::vector<optim::EpochMetrics>& rows);
nlohmann::json ledger_json(const privacy::PrivacyLedger& ledger);
nlohmann::json summary_json(const optim::TrainResult& result);

// Report serializers shared by the verify subcommand and the acceptance suite.
void write_concentration_csv(std::ostream& out, const verify::ScalingReport& r);
nlohmann::json verdict_json(const verify::ScalingReport& r);
void write_davis_kahan_csv(std::ostream& out, const verify::DavisKahanReport& r);
nlohmann::json verdict_json(const verify::DavisKahanReport& r);
nlohmann::json verdict_json(const verify::NoiseReductionReport& r);
void write_convergence_csv(std::ostream& out, const verify::ConvergenceTable& t);

struct TrainOptions {
  std::optional<std::string> out_dir;
  std::optional<std::size_t> repeat_seeds;
};

int cmd_train(const std::filesystem::path& config_path, const TrainOptions& opts);

struct AccountantArgs {
  double n = 0;
  double batch = 0;
  double epochs = 0;
  double delta = 1e-5;
  std::optional<double> sigma;
  std::optional<double> target_eps;
};

// Throws ConfigError for inconsistent arguments.
nlohmann::json run_accountant(const AccountantArgs& args);
int cmd_accountant(const AccountantArgs& args, std::ostream& out);

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> suites = {"concentration", "davis_kahan",
                                                  "noise_reduction", "convergence",
                                                  "geometry"};
  return suites;
}

// Runs one verification suite; returns the verdict JSON (with "pass").
nlohmann::json run_verify(const std::string& suite, const nlohmann::json& config,
                          const std::filesystem::path& out_dir);
int cmd_verify(const std::string& suite, const std::optional<std::filesystem::path>& config,
               const std::optional<std::string>& out_dir);

int cmd_spectrum(const std::filesystem::path& config_path, std::size_t top,
                 const std::optional<std::string>& out_dir);

// Machine-readable error line for failed commands.
nlohmann::json error_json(const std::string& type, const std::string& message);

// Runs `body`, mapping library errors onto exit codes and printing the
// error JSON to `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace pdpsgd::cli
