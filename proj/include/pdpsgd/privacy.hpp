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

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace pdpsgd::privacy {

// Subsampled Gaussian mechanism composed over `steps` rounds. `sigma` is the
// noise multiplier: noise std divided by the clipping bound.
struct MechanismConfig {
  double q = 0.0;
  double sigma = 0.0;
  std::uint64_t steps = 0;
  double delta = 1e-5;

  void validate() const;
};

struct RdpPoint {
  int order = 0;
  double epsilon = 0.0;
};

struct PrivacyLedger {
  MechanismConfig config;
  std::vector<RdpPoint> rdp_curve;  // per-step RDP at each order
  double epsilon = 0.0;
  int chosen_order = 0;
};

// {2, ..., 64} plus {80, 128, 256}.
std::vector<int> default_orders();

// Integer-order RDP of one subsampled Gaussian step:
//   1/(a-1) * log sum_j C(a,j) (1-q)^(a-j) q^j exp(j(j-1) / (2 sigma^2)),
// evaluated with log-sum-exp.
double rdp_subsampled_gaussian(double q, double sigma, int order);

// RDP of the plain Gaussian mechanism, a / (2 sigma^2).
double rdp_gaussian(double sigma, int order);

// epsilon = min_a [T * rdp(a) + log(1/delta) / (a - 1)]. Zero steps
// spend nothing and report epsilon = 0.
PrivacyLedger compose_and_convert(const MechanismConfig& config,
                                  const std::vector<int>& orders = default_orders());

// Smallest noise multiplier whose composed epsilon does not exceed
// target_eps. Brackets on a doubling grid, then bisects.
double calibrate_sigma(double target_eps, double delta, double q, std::uint64_t steps,
                       const std::vector<int>& orders = default_orders());

struct ClosedFormSigma {
  double sigma = 0.0;
  // Set when eps exceeds c1 * q^2 * T, outside the bound's stated range.
  bool outside_applicability = false;
};

struct ClosedFormParams {
  double c1 = 1.0;
  double c2 = 2.0;
  // Batch size; enables the applicability check when given.
  std::optional<double> batch_size;
};

// sigma = sqrt(c2 * G^2 * T * log(1/delta)) / (n * eps).
ClosedFormSigma closed_form_sigma(double eps, double delta, std::uint64_t steps,
                                  double n, double clip_bound,
                                  const ClosedFormParams& params = {});

}  // namespace pdpsgd::privacy
