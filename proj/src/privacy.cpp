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

#include "pdpsgd/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pdpsgd/error.hpp"

namespace pdpsgd::privacy {

namespace {

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double log_sum_exp(const std::vector<double>& terms) {
  const double peak = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - peak);
  return peak + std::log(acc);
}

double conversion(double total_rdp, int order, double delta) {
  return total_rdp + std::log(1.0 / delta) / (order - 1);
}

}  // namespace

void MechanismConfig::validate() const {
  if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("privacy: q must be in (0, 1]");
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidArgument("privacy: sigma must be finite and > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("privacy: delta must be in (0, 1)");
}

std::vector<int> default_orders() {
  std::vector<int> orders;
  for (int a = 2; a <= 64; ++a) orders.push_back(a);
  orders.insert(orders.end(), {80, 128, 256});
  return orders;
}

double rdp_subsampled_gaussian(double q, double sigma, int order) {
  if (order < 2) throw InvalidArgument("rdp: order must be an integer >= 2");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("rdp: q must be in [0, 1]");
  if (!(sigma > 0.0)) throw InvalidArgument("rdp: sigma must be > 0");
  if (q == 0.0) return 0.0;
  if (q == 1.0) return rdp_gaussian(sigma, order);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> terms(static_cast<std::size_t>(order) + 1);
  for (int j = 0; j <= order; ++j) {
    terms[static_cast<std::size_t>(j)] =
        log_binomial(order, j) + (order - j) * log_1mq + j * log_q +
        static_cast<double>(j) * (j - 1) / (2.0 * sigma * sigma);
  }
  return std::max(0.0, log_sum_exp(terms) / (order - 1));
}

double rdp_gaussian(double sigma, int order) {
  if (!(sigma > 0.0)) throw InvalidArgument("rdp: sigma must be > 0");
  return order / (2.0 * sigma * sigma);
}

PrivacyLedger compose_and_convert(const MechanismConfig& config,
                                  const std::vector<int>& orders) {
  config.validate();
  if (orders.empty()) throw InvalidArgument("compose_and_convert: no orders given");
  PrivacyLedger ledger;
  ledger.config = config;
  ledger.epsilon = std::numeric_limits<double>::infinity();
  const double steps = static_cast<double>(config.steps);
  for (int order : orders) {
    const double rdp = rdp_subsampled_gaussian(config.q, config.sigma, order);
    ledger.rdp_curve.push_back({order, rdp});
    const double eps = conversion(steps * rdp, order, config.delta);
    if (eps < ledger.epsilon) {
      ledger.epsilon = eps;
      ledger.chosen_order = order;
    }
  }
  if (config.steps == 0) ledger.epsilon = 0.0;
  return ledger;
}

double calibrate_sigma(double target_eps, double delta, double q, std::uint64_t steps,
                       const std::vector<int>& orders) {
  if (!(target_eps > 0.0)) throw InvalidArgument("calibrate_sigma: target_eps must be > 0");
  if (orders.empty()) throw InvalidArgument("calibrate_sigma: no orders given");
  MechanismConfig probe{q, 1.0, steps, delta};
  probe.validate();
  if (steps == 0) return 0.0;

  // As sigma grows the RDP term vanishes; only log(1/delta)/(a-1) remains.
  const int max_order = *std::max_element(orders.begin(), orders.end());
  const double floor_eps = std::log(1.0 / delta) / (max_order - 1);
  if (target_eps <= floor_eps)
    throw InvalidArgument("calibrate_sigma: target epsilon " + std::to_string(target_eps) +
                          " is unreachable (limit " + std::to_string(floor_eps) +
                          " for this order grid)");

  auto eps_at = [&](double sigma) {
    probe.sigma = sigma;
    return compose_and_convert(probe, orders).epsilon;
  };
  double lo = 1.0;
  double hi = 1.0;
  if (eps_at(hi) <= target_eps) {
    while (eps_at(lo) <= target_eps && lo > 1e-6) lo /= 2.0;
    if (eps_at(lo) <= target_eps) return lo;
    hi = lo * 2.0;
  } else {
    while (eps_at(hi) > target_eps) {
      hi *= 2.0;
      if (hi > 1e8) throw InvalidArgument("calibrate_sigma: target epsilon unreachable");
    }
    lo = hi / 2.0;
  }
  // Invariant: eps(lo) > target >= eps(hi).
  while (hi - lo > 1e-10 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (eps_at(mid) <= target_eps) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

ClosedFormSigma closed_form_sigma(double eps, double delta, std::uint64_t steps,
                                  double n, double clip_bound,
                                  const ClosedFormParams& params) {
  if (!(eps > 0) || !(delta > 0 && delta < 1) || steps == 0 || !(n > 0) ||
      !(clip_bound > 0) || !(params.c2 > 0))
    throw InvalidArgument("closed_form_sigma: all inputs must be positive");
  ClosedFormSigma out;
  const double t = static_cast<double>(steps);
  out.sigma = std::sqrt(params.c2 * clip_bound * clip_bound * t * std::log(1.0 / delta)) /
              (n * eps);
  if (params.batch_size) {
    const double q = *params.batch_size / n;
    out.outside_applicability = eps > params.c1 * q * q * t;
  }
  return out;
}

}  // namespace pdpsgd::privacy
