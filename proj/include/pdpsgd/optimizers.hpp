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

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pdpsgd/core_math.hpp"
#include "pdpsgd/data.hpp"
#include "pdpsgd/models.hpp"
#include "pdpsgd/privacy.hpp"
#include "pdpsgd/subspace.hpp"

namespace pdpsgd::optim {

enum class Algorithm { kSgd, kDpSgd, kPdpSgd, kRpdpSgd };
enum class StepSchedule { kConstant, kInvSqrtT };
enum class Sampling { kWithReplacement, kPoisson };

const char* algorithm_name(Algorithm a);
Algorithm parse_algorithm(const std::string& name);
const char* schedule_name(StepSchedule s);
StepSchedule parse_schedule(const std::string& name);
const char* sampling_name(Sampling s);
Sampling parse_sampling(const std::string& name);

struct Seeds {
  std::uint64_t init = 0;
  std::uint64_t subsample = 1;
  std::uint64_t noise = 2;
  std::uint64_t projection = 3;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::kDpSgd;
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  StepSchedule schedule = StepSchedule::kConstant;
  // Constant step size, or the numerator of step_size / sqrt(T).
  double step_size = 0.1;
  // Per-unit clipping bound; infinity disables clipping (plain SGD only).
  double clip = 1.0;
  double sigma = 0.0;
  double delta = 1e-5;
  std::size_t projection_dim = 0;
  std::size_t projection_update_every = 1;
  // 1-based epoch from which projection is applied.
  std::size_t projection_start_epoch = 1;
  std::size_t micro_batch_size = 1;
  std::optional<double> ball_radius;
  Sampling sampling = Sampling::kWithReplacement;
  Seeds seeds;
  std::size_t checkpoint_every = 1;
  std::size_t checkpoint_capacity = 64;
  bool evaluate_each_epoch = true;

  bool clipping_enabled() const { return std::isfinite(clip); }
  bool projects() const {
    return algorithm == Algorithm::kPdpSgd || algorithm == Algorithm::kRpdpSgd;
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  double principal_grad_norm = std::numeric_limits<double>::quiet_NaN();
  double eigen_gap = std::numeric_limits<double>::quiet_NaN();
  std::size_t subspace_refresh_count = 0;
  double epsilon_so_far = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  std::uint64_t step = 0;  // iterate after `step` updates
  models::ParamVector params;
};

struct TrainResult {
  models::ParamVector initial_params;
  models::ParamVector final_params;
  // Mean of w_1 .. w_T (equals the initial point when T = 0).
  models::ParamVector average_params;
  std::vector<EpochMetrics> per_epoch;
  std::vector<Checkpoint> checkpoints;  // sorted by step
  std::optional<privacy::PrivacyLedger> ledger;
  std::uint64_t steps = 0;
  std::size_t gap_degenerate_refreshes = 0;
};

// g = (1/units)(sum + N(0, sigma^2 C^2 I)); noise is drawn from stream
// indices [step * p, (step + 1) * p) so every algorithm sees the same b_t.
Vector noisy_gradient(const Vector& clipped_sum, double units, double clip,
                      double sigma, const RngStream& noise, std::uint64_t step);

// params - eta * noisy mean gradient of a clipped batch.
models::ParamVector dp_step(const models::ParamVector& params,
                            const models::GradientBatch& clipped, double clip,
                            double sigma, double eta, const RngStream& noise,
                            std::uint64_t step = 0);

// As dp_step, with the noisy gradient projected onto `sub` before the update.
models::ParamVector pdp_step(const models::ParamVector& params,
                             const models::GradientBatch& clipped,
                             const subspace::Subspace& sub, double clip, double sigma,
                             double eta, const RngStream& noise, std::uint64_t step = 0);

// Radial projection onto {w : ||w|| <= radius}.
models::ParamVector ball_project(const models::ParamVector& w, double radius);
void ball_project_inplace(Vector& w, double radius);

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size);

// Throws ConfigError on contradictions, before any gradient work.
void validate(const TrainConfig& config, const models::ModelSpec& spec,
              const data::Dataset& private_ds, const data::Dataset* public_ds);

// Runs the configured algorithm. The subspace is computed from public_ds
// only; the private set enters exclusively through clipped gradients.
TrainResult train(const TrainConfig& config, const models::ModelSpec& spec,
                  const data::Dataset& private_ds, const data::Dataset* public_ds,
                  const data::Dataset* test_ds);

// Uniform draw from the stored checkpoints (the w_R output).
const Checkpoint& sample_iterate(const TrainResult& result, std::uint64_t seed);

}  // namespace pdpsgd::optim
