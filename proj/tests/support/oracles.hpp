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

// Independent reference implementations used only by the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "pdpsgd/core_math.hpp"
#include "pdpsgd/data.hpp"

namespace oracle {

using pdpsgd::DenseMatrix;
using pdpsgd::Vector;

struct Eigenpairs {
  Vector values;        // descending
  DenseMatrix vectors;  // columns match values
};

// Cyclic Jacobi rotations; slow but free of any shared code with the library.
inline Eigenpairs jacobi_eigen(DenseMatrix a, int sweeps = 100) {
  const Eigen::Index n = a.rows();
  DenseMatrix v = DenseMatrix::Identity(n, n);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });
  Eigenpairs out{Vector(n), DenseMatrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

// Largest |eigenvalue| of a symmetric matrix.
inline double sym_norm(const DenseMatrix& a) {
  const auto e = jacobi_eigen(a);
  return std::max(std::abs(e.values(0)), std::abs(e.values(e.values.size() - 1)));
}

// Direct binomial sum for the subsampled Gaussian in 100-digit arithmetic.
inline double rdp_bigfloat(double q, double sigma, int alpha) {
  using big = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<100>>;
  big sum = 0;
  big binom = 1;
  const big bq = q, one_minus = big(1) - big(q), s2 = big(sigma) * big(sigma);
  for (int j = 0; j <= alpha; ++j) {
    if (j > 0) binom = binom * (alpha - j + 1) / j;
    sum += binom * boost::multiprecision::pow(one_minus, alpha - j) *
           boost::multiprecision::pow(bq, j) * boost::multiprecision::exp(big(j) * (j - 1) / (2 * s2));
  }
  return static_cast<double>(boost::multiprecision::log(sum) / (alpha - 1));
}

inline pdpsgd::data::Dataset random_dataset(std::size_t n, std::size_t f, int classes,
                                            std::uint64_t seed) {
  pdpsgd::RngStream rng(seed, "test/dataset");
  pdpsgd::data::Dataset ds;
  ds.features = pdpsgd::gaussian_matrix(rng, n, f, 0);
  ds.class_count = classes;
  for (std::size_t i = 0; i < n; ++i)
    ds.labels.push_back(static_cast<int>(rng.bits(1'000'000 + i) % static_cast<std::uint64_t>(classes)));
  return ds;
}

inline double rel_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

}  // namespace oracle
