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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdpsgd/core_math.hpp"
#include "pdpsgd/data.hpp"
#include "pdpsgd/models.hpp"
#include "pdpsgd/optimizers.hpp"
#include "pdpsgd/subspace.hpp"

namespace pdpsgd::verify {

// Source of i.i.d. gradient draws with a reference second moment Sigma.
class GradientSource {
 public:
  virtual ~GradientSource() = default;
  virtual Eigen::Index dim() const = 0;
  // p x m block of draws; stream indices are owned by `rng`.
  virtual DenseMatrix sample(std::size_t m, const RngStream& rng) const = 0;
  virtual const DenseMatrix& sigma() const = 0;
  virtual std::string name() const = 0;
};

// g = Q diag(sqrt(lambda)) z with z ~ N(0, I); Sigma = Q diag(lambda) Q^T.
class GaussianSource : public GradientSource {
 public:
  GaussianSource(DenseMatrix eigenvectors, Vector eigenvalues);

  Eigen::Index dim() const override { return eigenvectors_.rows(); }
  DenseMatrix sample(std::size_t m, const RngStream& rng) const override;
  const DenseMatrix& sigma() const override { return sigma_; }
  std::string name() const override { return "gaussian"; }

  const DenseMatrix& eigenvectors() const { return eigenvectors_; }
  const Vector& eigenvalues() const { return eigenvalues_; }
  // Top-k population eigenspace (first k columns of Q).
  subspace::Subspace top_k(Eigen::Index k) const;
  // lambda_k - lambda_{k+1}, 1-based k.
  double gap(Eigen::Index k) const;

 private:
  DenseMatrix eigenvectors_;  // p x r, orthonormal, sorted by eigenvalue
  Vector eigenvalues_;        // descending
  DenseMatrix sigma_;
};

// Eigenvalues `top` for the first k directions and `bulk` for the rest,
// in a random orthonormal frame drawn from `seed`.
GaussianSource spiked_source(Eigen::Index p, Eigen::Index k, double top, double bulk,
                             std::uint64_t seed);

// Same spectrum as `src` with the frame multiplied by a random rotation.
GaussianSource rotated(const GaussianSource& src, std::uint64_t seed);

// Same frame, eigenvalues multiplied by scale^2 (gradients scaled by `scale`).
GaussianSource scaled(const GaussianSource& src, double scale);

// Finite pool of gradients; Sigma is the pool's plug-in second moment and
// draws are taken without replacement.
class PoolSource : public GradientSource {
 public:
  explicit PoolSource(DenseMatrix pool);

  Eigen::Index dim() const override { return pool_.rows(); }
  DenseMatrix sample(std::size_t m, const RngStream& rng) const override;
  const DenseMatrix& sigma() const override { return sigma_; }
  std::string name() const override { return "pool"; }
  std::size_t size() const { return static_cast<std::size_t>(pool_.cols()); }

 private:
  DenseMatrix pool_;
  DenseMatrix sigma_;
};

struct ReplicateStats {
  double mean = 0.0;
  double median = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

ReplicateStats summarize(const std::vector<double>& values);

// Least-squares slope of log(y) against log(x).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

struct ScalingReport {
  std::string experiment;
  std::string axis_name;
  std::vector<double> axis;
  std::vector<ReplicateStats> stats;
  std::vector<std::vector<double>> replicates;  // [axis point][replicate]
  std::optional<double> slope;  // only with >= 3 axis points
  double slope_low = -0.65;
  double slope_high = -0.35;
  bool pass = true;
};

// E ||M - Sigma||_2 over `reps` draws of m gradients for each m.
ScalingReport concentration_experiment(const GradientSource& source,
                                       const std::vector<std::size_t>& m_values,
                                       std::size_t reps, std::uint64_t seed,
                                       double slope_low = -0.65, double slope_high = -0.35);

struct DavisKahanRow {
  std::size_t m = 0;
  std::size_t replicate = 0;
  double distance = 0.0;
  double error_norm = 0.0;  // ||M - Sigma||_2
  double bound = 0.0;       // 2 ||M - Sigma||_2 / gap
  bool conditional = false;  // ||M - Sigma||_2 <= gap / 2
  bool satisfied = true;
};

struct DavisKahanReport {
  std::size_t k = 0;
  double gap = 0.0;
  std::vector<DavisKahanRow> rows;
  std::vector<std::size_t> m_values;
  std::vector<double> median_distance;  // per m
  std::vector<double> shrink_ratios;    // median(m_i) / median(m_{i+1})
  double ratio_low = 1.6;
  double ratio_high = 2.5;
  std::size_t conditional_count = 0;
  std::size_t violations = 0;
  bool ratios_pass = true;
  bool pass = true;
};

// Per replicate: draw m gradients, extract the top-k eigenspace, compare to
// the population eigenspace and to the 2||M - Sigma||/gap bound. Ratios are
// checked only when successive m values differ by a factor of 4.
DavisKahanReport davis_kahan_check(const GaussianSource& source, Eigen::Index k,
                                   const std::vector<std::size_t>& m_values,
                                   std::size_t reps, std::uint64_t seed);

struct NoiseReductionReport {
  Eigen::Index p = 0;
  Eigen::Index k = 0;
  std::size_t draws = 0;
  double mean_projected_energy = 0.0;
  double mean_full_energy = 0.0;
  double ratio = 0.0;
  double expected = 0.0;
  double relative_error = 0.0;
  double tolerance = 0.05;
  bool pass = false;
};

// E||V V^T b||^2 / E||b||^2 for b ~ N(0, noise_std^2 I_p) against k/p.
NoiseReductionReport noise_reduction(const subspace::Subspace& sub, std::size_t draws,
                                     double noise_std, std::uint64_t seed,
                                     double tolerance = 0.05);

struct DominancePoint {
  std::uint64_t step = 0;
  std::optional<double> ratio;  // ||residual||^2 / ||principal||^2
  double gradient_norm = 0.0;
};

struct DominanceSeries {
  std::vector<DominancePoint> points;
  std::optional<double> average;  // over points with a defined ratio
};

// Splits the empirical gradient at each checkpoint into its component in
// the oracle top-k eigenspace (estimated on `oracle_ds`) and the residual.
DominanceSeries principal_dominance(const models::ModelSpec& spec,
                                    const std::vector<optim::Checkpoint>& checkpoints,
                                    const data::Dataset& full_ds,
                                    const data::Dataset& oracle_ds, Eigen::Index k);

struct SpectrumRow {
  std::uint64_t step = 0;
  subspace::SpectrumSummary spectrum;
};

struct SpectrumTrace {
  std::vector<SpectrumRow> rows;
  // mean over checkpoints of 1 / gap^2 (infinite when any gap is 0)
  double inverse_gap_sq_mean = 0.0;
};

SpectrumTrace spectrum_trace(const models::ModelSpec& spec,
                             const std::vector<optim::Checkpoint>& checkpoints,
                             const data::Dataset& public_ds, Eigen::Index top,
                             Eigen::Index k);

struct GradientGeometry {
  std::vector<double> sorted_abs_coordinates;
  double decay_constant = 0.0;  // c in |m(j)| ~ c j^(-exponent)
  double decay_exponent = 0.0;
  std::vector<double> top_spectrum;
  std::optional<double> gaussian_width_estimate;
};

GradientGeometry coordinate_decay(const Vector& gradient);

struct WidthEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
};

// Monte Carlo E_v[max_i <points_i, v>] with v ~ N(0, I); points are columns.
WidthEstimate gaussian_width_estimate(const DenseMatrix& points, std::size_t draws,
                                      std::uint64_t seed);

struct ConvexProblem {
  data::SyntheticSpec synthetic;
  std::size_t public_size = 100;
  std::uint64_t public_seed = 7;
  std::size_t epochs = 20;
  std::size_t batch_size = 50;
  double step_scale = 1.0;  // eta = step_scale / sqrt(T)
  double clip = 1.0;
  double delta = 1e-5;
  double ball_radius = 3.0;
  std::size_t projection_dim = 5;
};

struct ReferenceOptimum {
  models::ParamVector params;
  double loss = 0.0;
  double gradient_mapping_norm = 0.0;
  std::size_t iterations = 0;
};

// Projected full-batch gradient descent run until the gradient mapping
// falls below `tol` (or max_iter).
ReferenceOptimum solve_reference(const models::ModelSpec& spec, const data::Dataset& ds,
                                 double ball_radius, double tol = 1e-10,
                                 std::size_t max_iter = 200000);

struct ConvergenceRow {
  optim::Algorithm algorithm = optim::Algorithm::kDpSgd;
  double epsilon = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double excess_risk = 0.0;
  double final_loss = 0.0;
};

struct ConvergenceTable {
  double optimum_loss = 0.0;
  std::vector<ConvergenceRow> rows;

  // Mean and population std of excess risk for one (algorithm, epsilon).
  ReplicateStats stats(optim::Algorithm a, double epsilon) const;
};

// Calibrates sigma for each epsilon (infinity means sigma = 0), trains every
// algorithm for every seed and reports excess risk of the averaged iterate.
ConvergenceTable convergence_comparison(const ConvexProblem& problem,
                                        const std::vector<double>& epsilons,
                                        const std::vector<optim::Algorithm>& algorithms,
                                        const std::vector<std::uint64_t>& seeds);

// Logistic model without bias matching the problem's features.
models::ModelSpec convex_model(const ConvexProblem& problem);

}  // namespace pdpsgd::verify
