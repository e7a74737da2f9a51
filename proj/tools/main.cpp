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

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pdpsgd/cli.hpp"

namespace cli = pdpsgd::cli;

int main(int argc, char** argv) {
  CLI::App app{"Differentially private SGD with gradient-subspace projection"};
  app.require_subcommand(1);

  std::string train_config;
  std::string train_out;
  std::size_t repeat_seeds = 0;
  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("config", train_config, "config file")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_option("--repeat-seeds", repeat_seeds, "repeat with shifted seeds")->check(CLI::PositiveNumber);

  cli::AccountantArgs acc;
  double sigma = 0, target = 0;
  auto* accountant = app.add_subcommand("accountant", "Privacy accounting for the subsampled Gaussian");
  accountant->add_option("--n", acc.n, "private set size")->required();
  accountant->add_option("--batch", acc.batch, "expected batch size")->required();
  accountant->add_option("--epochs", acc.epochs, "number of epochs")->required();
  accountant->add_option("--delta", acc.delta, "delta")->capture_default_str();
  auto* sigma_opt = accountant->add_option("--sigma", sigma, "noise multiplier");
  auto* target_opt = accountant->add_option("--target-eps", target, "target epsilon");

  std::string suite, verify_config, verify_out;
  auto* verify = app.add_subcommand("verify", "Run a verification suite");
  verify->add_option("suite", suite, "concentration | davis_kahan | noise_reduction | convergence | geometry")
      ->required();
  verify->add_option("--config", verify_config, "suite config (JSON)");
  verify->add_option("--out", verify_out, "output directory");

  std::string spectrum_config, spectrum_out;
  std::size_t top = 50;
  auto* spectrum = app.add_subcommand("spectrum", "Export public-gradient spectra along a run");
  spectrum->add_option("config", spectrum_config, "config file")->required();
  spectrum->add_option("--top", top, "number of eigenvalues")->capture_default_str();
  spectrum->add_option("--out", spectrum_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << cli::error_json("usage", e.what()).dump() << "\n";
    return cli::kUsage;
  }

  auto opt_string = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::string>(s);
  };

  return cli::guarded(
      [&]() -> int {
        if (*train) {
          cli::TrainOptions opts;
          opts.out_dir = opt_string(train_out);
          if (repeat_seeds) opts.repeat_seeds = repeat_seeds;
          return cli::cmd_train(train_config, opts);
        }
        if (*accountant) {
          if (*sigma_opt) acc.sigma = sigma;
          if (*target_opt) acc.target_eps = target;
          return cli::cmd_accountant(acc, std::cout);
        }
        if (*verify) {
          std::optional<std::filesystem::path> cfg;
          if (!verify_config.empty()) cfg = verify_config;
          return cli::cmd_verify(suite, cfg, opt_string(verify_out));
        }
        return cli::cmd_spectrum(spectrum_config, top, opt_string(spectrum_out));
      },
      std::cerr);
}
