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
#include <vector>

#include "pdpsgd/core_math.hpp"
#include "pdpsgd/models.hpp"

namespace pdpsgd::subspace {

enum class Source { kPublicEigen, kRandom, kOracle };

const char* source_name(Source s);

// Orthonormal p x k column block, optionally with the eigenvalues of the
// matrix it was extracted from.
struct Subspace {
  DenseMatrix basis;
  std::vector<double> eigenvalues;  // descending; empty for random projections
  Source source = Source::kPublicEigen;
  std::uint64_t step_created = 0;
  // Fewer than the requested columns were numerically available.
  bool rank_deficient = false;
  std::size_t requested_k = 0;
  // lambda_{k+1} of the source matrix (0 past its rank).
  double next_eigenvalue = 0.0;

  Eigen::Index dim() const { return basis.rows(); }
  Eigen::Index rank() const { return basis.cols(); }
};

struct SpectrumSummary {
  std::vector<double> top_eigenvalues;
  double eigen_gap_at_k = 0.0;
  bool gap_degenerate = false;
  double trace = 0.0;
};

// (1/m) sum_i g_i g_i^T as an explicit matrix. Throws CapacityError when p
// exceeds `max_explicit_dim`.
DenseMatrix second_moment(const models::GradientBatch& gb,
                          Eigen::Index max_explicit_dim = 4096);

// Implicit x -> (1/m) G (G^T x) over the p x m gradient factor.
class SecondMomentOperator {
 public:
  explicit SecondMomentOperator(const DenseMatrix& factor);

  Vector apply(const Vector& x) const;
  Eigen::Index dim() const { return factor_.rows(); }
  double trace() const;

 private:
  const DenseMatrix& factor_;
};

struct EigenspaceOptions {
  // The Gram route is used while m <= this; Lanczos above it.
  Eigen::Index lanczos_threshold = 512;
  // Eigenvalues below rank_tol * lambda_max count as numerically zero.
  double rank_tol = 1e-12;
  double lanczos_tol = 1e-10;
  std::uint64_t seed = 0x1a2c;
};

// Top-k eigenspace of the second moment of the batch columns. Columns are
// sign-normalized (largest-magnitude component positive) so repeated calls
// agree bit for bit.
Subspace top_k_eigenspace(const models::GradientBatch& gb, Eigen::Index k,
                          const EigenspaceOptions& opts = {});

// Leading eigenvalues (up to `top`), gap at k and trace of the batch
// second moment.
SpectrumSummary spectrum_summary(const models::GradientBatch& gb, Eigen::Index top,
                                 Eigen::Index k, const EigenspaceOptions& opts = {});

// Gaussian p x k matrix orthonormalized by QR.
Subspace random_projection(Eigen::Index p, Eigen::Index k, std::uint64_t seed);

// Subspace spanned by the given columns (orthonormalized).
Subspace from_basis(const DenseMatrix& columns, Source source);

// V (V^T x).
Vector project(const Subspace& sub, const Vector& x);

// ||A A^T - B B^T||_2 for equal-rank bases, i.e. the sine of the largest
// principal angle, computed as ||(I - A A^T) B||_2.
double subspace_distance(const Subspace& a, const Subspace& b);
double subspace_distance(const DenseMatrix& a, const DenseMatrix& b);

struct GapInfo {
  double gap = 0.0;
  bool degenerate = false;
};

// lambda_k - lambda_{k+1} (1-based k); lambda_{k+1} is taken as 0 when only
// k values are given.
GapInfo eigen_gap(const std::vector<double>& eigenvalues, std::size_t k);
GapInfo eigen_gap(const SpectrumSummary& spectrum, std::size_t k);

// Largest-magnitude component of every column made positive.
void normalize_signs(DenseMatrix& basis);

}  // namespace pdpsgd::subspace
