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
#include <functional>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace pdpsgd {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

// True when every entry is finite.
bool all_finite(const DenseMatrix& m);
bool all_finite(const Vector& v);

// Counter-based random source. Draw i of a stream depends only on
// (seed, stream_id, i), never on how many draws happened before, so callers
// can hand disjoint index ranges to independent workers.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string stream_id);

  std::uint64_t seed() const { return seed_; }
  const std::string& stream_id() const { return stream_id_; }

  // Uniform on the open interval (0, 1).
  double uniform(std::uint64_t index) const;
  // Standard normal.
  double normal(std::uint64_t index) const;
  // Raw 64 random bits.
  std::uint64_t bits(std::uint64_t index) const;

  // Independent stream whose label extends this one, e.g. "noise/rep3".
  RngStream child(std::string_view suffix) const;

 private:
  std::uint64_t seed_;
  std::string stream_id_;
  std::uint32_t key_[2];
};

// dim i.i.d. N(0, std^2) draws taken from indices [offset, offset + dim).
Vector gaussian_vector(const RngStream& rng, std::size_t dim, double std,
                       std::uint64_t offset = 0);

// Matrix with i.i.d. N(0,1) entries filled column by column from `offset`.
DenseMatrix gaussian_matrix(const RngStream& rng, std::size_t rows,
                            std::size_t cols, std::uint64_t offset = 0);

struct SpectralNormOptions {
  double tol = 1e-8;
  int max_iter = 20000;
  std::uint64_t seed = 0x5eed;
};

// Largest singular value by power iteration from a seeded random start.
// Symmetric inputs iterate on A directly, others on A^T A. Throws
// NonConvergence carrying the last estimate when max_iter is exhausted.
double spectral_norm(const DenseMatrix& a, const SpectralNormOptions& opts = {});

// Power iteration for a symmetric operator given only by its action.
double spectral_norm_symmetric(
    const std::function<Vector(const Vector&)>& apply, Eigen::Index dim,
    const SpectralNormOptions& opts = {});

// Largest |eigenvalue| of a symmetric matrix from a full dense eigensolve.
// Reserved for moderate sizes (verification experiments and oracles).
double symmetric_spectral_norm_dense(const DenseMatrix& a);

using ScalarFunction = std::function<double(const Vector&)>;

// Central differences (f(w + h e_i) - f(w - h e_i)) / 2h per coordinate.
Vector finite_diff_grad(const ScalarFunction& f, const Vector& w, double h);

// max |Q^T Q - I| entry.
double orthonormality_error(const DenseMatrix& q);

// Sum with pairwise splitting; stable and independent of thread layout.
double pairwise_sum(std::span<const double> values);

}  // namespace pdpsgd
