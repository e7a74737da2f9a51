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

#include <cmath>

#include "oracles.hpp"
#include "pdpsgd/error.hpp"
#include "pdpsgd/privacy.hpp"

using namespace pdpsgd;
using namespace pdpsgd::privacy;

namespace {

double mnist_scale_eps(double sigma) {
  return compose_and_convert({0.025, sigma, 1200, 1e-5}).epsilon;
}

}  // namespace

TEST_CASE("rdp collapses to the Gaussian mechanism at q = 1") {
  CHECK(rdp_subsampled_gaussian(1.0, 1.0, 2) == doctest::Approx(1.0));
  for (int a : default_orders())
    for (double s : {0.5, 1.0, 3.0})
      CHECK(rdp_subsampled_gaussian(1.0, s, a) == doctest::Approx(rdp_gaussian(s, a)).epsilon(1e-14));
}

TEST_CASE("rdp is zero without sampling") {
  for (int a : {2, 10, 256}) CHECK(rdp_subsampled_gaussian(0.0, 1.0, a) == 0.0);
}

TEST_CASE("rdp matches 100-digit evaluation of the binomial sum") {
  for (int a = 2; a <= 64; ++a) {
    CAPTURE(a);
    const double expected = oracle::rdp_bigfloat(0.01, 1.0, a);
    CHECK(rdp_subsampled_gaussian(0.01, 1.0, a) == doctest::Approx(expected).epsilon(1e-10));
  }
  for (int a : {2, 17, 80, 128, 256}) {
    CAPTURE(a);
    const double expected = oracle::rdp_bigfloat(0.025, 4.0, a);
    CHECK(rdp_subsampled_gaussian(0.025, 4.0, a) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("rdp survives orders where direct summation overflows") {
  const double v = rdp_subsampled_gaussian(0.5, 0.3, 256);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(oracle::rdp_bigfloat(0.5, 0.3, 256)).epsilon(1e-10));
}

TEST_CASE("rdp rejects invalid arguments") {
  CHECK_THROWS_AS(rdp_subsampled_gaussian(0.1, 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(rdp_subsampled_gaussian(1.5, 1.0, 2), InvalidArgument);
  CHECK_THROWS_AS(rdp_subsampled_gaussian(0.1, 0.0, 2), InvalidArgument);
}

TEST_CASE("composition reproduces the published epsilon table") {
  const std::vector<std::pair<double, double>> table = {
      {2, 2.41}, {4, 1.09}, {6, 0.72}, {8, 0.53}, {10, 0.42}, {14, 0.30}, {18, 0.23}};
  for (const auto& [sigma, eps] : table) {
    CAPTURE(sigma);
    CHECK(std::abs(mnist_scale_eps(sigma) - eps) <= 0.15 * eps);
  }
}

TEST_CASE("zero steps spend nothing") {
  const auto ledger = compose_and_convert({0.025, 2.0, 0, 1e-5});
  CHECK(ledger.epsilon == 0.0);
}

TEST_CASE("ledger records the minimizing order") {
  const auto ledger = compose_and_convert({0.025, 4.0, 1200, 1e-5});
  CHECK(ledger.rdp_curve.size() == default_orders().size());
  double best = 1e300;
  int best_order = 0;
  for (const auto& pt : ledger.rdp_curve) {
    CHECK(pt.epsilon >= 0.0);
    const double e = 1200 * pt.epsilon + std::log(1e5) / (pt.order - 1);
    if (e < best) {
      best = e;
      best_order = pt.order;
    }
  }
  CHECK(ledger.epsilon == best);
  CHECK(ledger.chosen_order == best_order);

  const auto single = compose_and_convert({0.025, 4.0, 1200, 1e-5}, {7});
  CHECK(single.epsilon == 1200 * rdp_subsampled_gaussian(0.025, 4.0, 7) + std::log(1e5) / 6.0);
  CHECK_THROWS_AS(compose_and_convert({0.025, 4.0, 1200, 1e-5}, {}), InvalidArgument);
}

TEST_CASE("epsilon is monotone in steps, q and sigma") {
  for (double q : {0.005, 0.02, 0.1})
    for (double sigma : {0.8, 2.0, 6.0})
      for (std::uint64_t t : {10u, 100u, 1000u}) {
        const double e = compose_and_convert({q, sigma, t, 1e-5}).epsilon;
        CHECK(compose_and_convert({q, sigma, t * 2, 1e-5}).epsilon >= e);
        CHECK(compose_and_convert({q * 1.5, sigma, t, 1e-5}).epsilon >= e);
        CHECK(compose_and_convert({q, sigma * 1.5, t, 1e-5}).epsilon <= e);
      }
}

TEST_CASE("rdp curve is non-decreasing in the order for small q") {
  for (double q : {0.001, 0.01, 0.025})
    for (double sigma : {1.0, 4.0, 10.0}) {
      const auto ledger = compose_and_convert({q, sigma, 1, 1e-5});
      for (std::size_t i = 1; i < ledger.rdp_curve.size(); ++i)
        CHECK(ledger.rdp_curve[i].epsilon >= ledger.rdp_curve[i - 1].epsilon);
    }
}

TEST_CASE("calibrate_sigma round trips") {
  for (double target : {0.23, 0.42, 1.09, 2.41, 8.0}) {
    CAPTURE(target);
    const double sigma = calibrate_sigma(target, 1e-5, 0.025, 1200);
    const double back = compose_and_convert({0.025, sigma, 1200, 1e-5}).epsilon;
    CHECK(std::abs(back - target) / target < 0.01);
    CHECK(back <= target);
  }
  const double s109 = calibrate_sigma(1.09, 1e-5, 0.025, 1200);
  CHECK(s109 >= 3.4);
  CHECK(s109 <= 4.6);
  const double s042 = calibrate_sigma(0.42, 1e-5, 0.025, 1200);
  CHECK(std::abs(s042 - 10.0) <= 2.0);
}

TEST_CASE("calibrated sigma grows with the step count") {
  const double a = calibrate_sigma(1.0, 1e-5, 0.025, 600);
  const double b = calibrate_sigma(1.0, 1e-5, 0.025, 1200);
  const double c = calibrate_sigma(1.0, 1e-5, 0.025, 2400);
  CHECK(a < b);
  CHECK(b < c);
}

TEST_CASE("calibrate_sigma reports unreachable targets") {
  CHECK_THROWS_AS(calibrate_sigma(0.01, 1e-5, 0.025, 1200), InvalidArgument);
  CHECK_THROWS_AS(calibrate_sigma(0.0, 1e-5, 0.025, 1200), InvalidArgument);
  CHECK(calibrate_sigma(1.0, 1e-5, 0.025, 0) == 0.0);
}

TEST_CASE("closed form sigma") {
  const double expected = std::sqrt(2.0 * 1200 * std::log(1e5)) / (10000 * 1.09);
  CHECK(closed_form_sigma(1.09, 1e-5, 1200, 10000, 1.0).sigma == doctest::Approx(expected).epsilon(1e-14));
  const double base = closed_form_sigma(0.5, 1e-5, 1000, 5000, 1.0).sigma;
  CHECK(closed_form_sigma(0.5, 1e-5, 1000, 10000, 1.0).sigma == doctest::Approx(base / 2));
  CHECK(closed_form_sigma(0.5, 1e-5, 4000, 5000, 1.0).sigma == doctest::Approx(base * 2));
  ClosedFormParams c3;
  c3.c2 = 8.0;
  CHECK(closed_form_sigma(0.5, 1e-5, 1000, 5000, 1.0, c3).sigma == doctest::Approx(base * 2));
  CHECK_THROWS_AS(closed_form_sigma(0.0, 1e-5, 1000, 5000, 1.0), InvalidArgument);
}

TEST_CASE("closed form flags epsilon outside its range") {
  ClosedFormParams p;
  p.batch_size = 250;
  // q^2 T = 0.025^2 * 1200 = 0.75
  CHECK(!closed_form_sigma(0.5, 1e-5, 1200, 10000, 1.0, p).outside_applicability);
  CHECK(closed_form_sigma(1.09, 1e-5, 1200, 10000, 1.0, p).outside_applicability);
  CHECK(!closed_form_sigma(1.09, 1e-5, 1200, 10000, 1.0).outside_applicability);
}
