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

// Small end-to-end scenarios shared by unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>

#include "pdpsgd/data.hpp"
#include "pdpsgd/models.hpp"
#include "pdpsgd/optimizers.hpp"

namespace scenario {

struct Trajectories {
  pdpsgd::optim::TrainResult dp;
  pdpsgd::optim::TrainResult pdp;
  double max_coordinate_gap = 0.0;
  std::size_t compared_steps = 0;
};

// Logistic model with bias, so public gradients span the whole parameter
// space and k = p yields a complete basis. 100 steps, every iterate kept.
inline Trajectories complete_basis_runs(std::uint64_t seed) {
  using namespace pdpsgd;
  const data::SyntheticSpec syn{12, 700, 12, 0.1, 2, seed};
  const auto pr = data::synthetic_lowrank(syn);
  const auto parts = data::split_public_private(pr.dataset, {500, 100, seed});

  models::ModelSpec spec;
  spec.family = models::Family::kLogistic;
  spec.input_dim = 12;
  optim::TrainConfig cfg;
  cfg.algorithm = optim::Algorithm::kDpSgd;
  cfg.epochs = 10;
  cfg.batch_size = 50;
  cfg.step_size = 0.2;
  cfg.clip = 1.0;
  cfg.sigma = 1.5;
  cfg.checkpoint_every = 1;
  cfg.checkpoint_capacity = 100;
  cfg.seeds = {seed, seed + 11, seed + 22, seed + 33};

  Trajectories t;
  t.dp = optim::train(cfg, spec, parts.private_set, &parts.public_set, nullptr);
  cfg.algorithm = optim::Algorithm::kPdpSgd;
  cfg.projection_dim = spec.param_count();
  t.pdp = optim::train(cfg, spec, parts.private_set, &parts.public_set, nullptr);

  const auto& a = t.dp.checkpoints;
  const auto& b = t.pdp.checkpoints;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i].step != b[i].step) {
      t.max_coordinate_gap = INFINITY;
      break;
    }
    t.max_coordinate_gap = std::max(
        t.max_coordinate_gap, (a[i].params.values - b[i].params.values).lpNorm<Eigen::Infinity>());
    ++t.compared_steps;
  }
  return t;
}

}  // namespace scenario
