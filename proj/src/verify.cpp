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

#include "pdpsgd/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pdpsgd/error.hpp"
#include "pdpsgd/privacy.hpp"

namespace pdpsgd::verify {

namespace {

DenseMatrix random_orthogonal(Eigen::Index p, const RngStream& rng) {
  const DenseMatrix raw = gaussian_matrix(rng, static_cast<std::size_t>(p),
                                          static_cast<std::size_t>(p));
  Eigen::HouseholderQR<DenseMatrix> qr(raw);
  DenseMatrix q = qr.householderQ();
  // Fix the QR sign ambiguity so the draw is Haar distributed.
  const Vector diag = qr.matrixQR().diagonal();
  for (Eigen::Index j = 0; j < p; ++j)
    if (diag[j] < 0) q.col(j) *= -1.0;
  return q;
}

std::string m_label(std::size_t m, std::size_t rep) {
  return "m" + std::to_string(m) + "/rep" + std::to_string(rep);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

GaussianSource::GaussianSource(DenseMatrix eigenvectors, Vector eigenvalues)
    : eigenvectors_(std::move(eigenvectors)), eigenvalues_(std::move(eigenvalues)) {
  if (eigenvectors_.cols() != eigenvalues_.size())
    throw DimensionMismatch("GaussianSource: eigenvector/eigenvalue count mismatch");
  if ((eigenvalues_.array() < 0).any())
    throw InvalidArgument("GaussianSource: eigenvalues must be non-negative");
  for (Eigen::Index i = 1; i < eigenvalues_.size(); ++i)
    if (eigenvalues_[i] > eigenvalues_[i - 1])
      throw InvalidArgument("GaussianSource: eigenvalues must be sorted descending");
  sigma_ = eigenvectors_ * eigenvalues_.asDiagonal() * eigenvectors_.transpose();
  if (sigma_.cwiseAbs().maxCoeff() == 0.0)
    throw InvalidArgument("GaussianSource: degenerate generator (Sigma = 0)");
}

DenseMatrix GaussianSource::sample(std::size_t m, const RngStream& rng) const {
  const DenseMatrix z =
      gaussian_matrix(rng, static_cast<std::size_t>(eigenvalues_.size()), m);
  return eigenvectors_ * (eigenvalues_.cwiseSqrt().asDiagonal() * z);
}

subspace::Subspace GaussianSource::top_k(Eigen::Index k) const {
  if (k < 1 || k > eigenvectors_.cols())
    throw InvalidArgument("GaussianSource::top_k: k out of range");
  subspace::Subspace s;
  s.basis = eigenvectors_.leftCols(k);
  s.eigenvalues.assign(eigenvalues_.data(), eigenvalues_.data() + k);
  s.source = subspace::Source::kOracle;
  s.requested_k = static_cast<std::size_t>(k);
  s.next_eigenvalue = k < eigenvalues_.size() ? eigenvalues_[k] : 0.0;
  return s;
}

double GaussianSource::gap(Eigen::Index k) const {
  if (k < 1 || k > eigenvalues_.size()) throw InvalidArgument("gap: k out of range");
  const double next = k < eigenvalues_.size() ? eigenvalues_[k] : 0.0;
  return eigenvalues_[k - 1] - next;
}

GaussianSource spiked_source(Eigen::Index p, Eigen::Index k, double top, double bulk,
                             std::uint64_t seed) {
  if (k < 1 || k > p) throw InvalidArgument("spiked_source: need 1 <= k <= p");
  if (top < bulk || bulk < 0) throw InvalidArgument("spiked_source: need top >= bulk >= 0");
  Vector lambda = Vector::Constant(p, bulk);
  lambda.head(k).setConstant(top);
  Eigen::Index rank = p;
  if (bulk == 0.0) rank = k;
  DenseMatrix frame = random_orthogonal(p, RngStream(seed, "spiked_source"));
  return GaussianSource(frame.leftCols(rank), lambda.head(rank));
}

GaussianSource rotated(const GaussianSource& src, std::uint64_t seed) {
  const DenseMatrix r = random_orthogonal(src.dim(), RngStream(seed, "rotation"));
  return GaussianSource(r * src.eigenvectors(), src.eigenvalues());
}

GaussianSource scaled(const GaussianSource& src, double scale) {
  return GaussianSource(src.eigenvectors(), src.eigenvalues() * scale * scale);
}

PoolSource::PoolSource(DenseMatrix pool) : pool_(std::move(pool)) {
  if (pool_.cols() == 0) throw InvalidArgument("PoolSource: empty pool");
  sigma_ = pool_ * pool_.transpose() / static_cast<double>(pool_.cols());
  if (sigma_.cwiseAbs().maxCoeff() == 0.0)
    throw InvalidArgument("PoolSource: degenerate generator (Sigma = 0)");
}

DenseMatrix PoolSource::sample(std::size_t m, const RngStream& rng) const {
  const std::size_t n = size();
  if (m > n) throw InvalidArgument("PoolSource: m exceeds pool size");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j =
        i + std::min(static_cast<std::size_t>(rng.uniform(i) * static_cast<double>(n - i)),
                     n - i - 1);
    std::swap(idx[i], idx[j]);
  }
  DenseMatrix out(pool_.rows(), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i)
    out.col(static_cast<Eigen::Index>(i)) = pool_.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

ReplicateStats summarize(const std::vector<double>& values) {
  ReplicateStats s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = pairwise_sum(values) / static_cast<double>(values.size());
  s.median = median_of(values);
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std_error = std::sqrt(ss / static_cast<double>(values.size() - 1)) /
                  std::sqrt(static_cast<double>(values.size()));
  }
  return s;
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InvalidArgument("log_log_slope: need >= 2 paired points");
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw InvalidArgument("log_log_slope: non-positive value");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw InvalidArgument("log_log_slope: x values are all equal");
  return sxy / sxx;
}

ScalingReport concentration_experiment(const GradientSource& source,
                                       const std::vector<std::size_t>& m_values,
                                       std::size_t reps, std::uint64_t seed,
                                       double slope_low, double slope_high) {
  if (m_values.empty()) throw InvalidArgument("concentration: no m values");
  if (reps < 2) throw InvalidArgument("concentration: need at least 2 replicates");
  ScalingReport report;
  report.experiment = "concentration";
  report.axis_name = "m";
  report.slope_low = slope_low;
  report.slope_high = slope_high;
  const RngStream root(seed, "concentration");
  for (std::size_t m : m_values) {
    if (m == 0) throw InvalidArgument("concentration: m must be >= 1");
    std::vector<double> errors;
    errors.reserve(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      const DenseMatrix g = source.sample(m, root.child(m_label(m, r)));
      const DenseMatrix diff = g * g.transpose() / static_cast<double>(m) - source.sigma();
      errors.push_back(symmetric_spectral_norm_dense(diff));
    }
    report.axis.push_back(static_cast<double>(m));
    report.stats.push_back(summarize(errors));
    report.replicates.push_back(std::move(errors));
  }
  if (report.axis.size() >= 3) {
    std::vector<double> means;
    for (const auto& s : report.stats) means.push_back(s.mean);
    report.slope = log_log_slope(report.axis, means);
    report.pass = *report.slope >= slope_low && *report.slope <= slope_high;
  }
  return report;
}

DavisKahanReport davis_kahan_check(const GaussianSource& source, Eigen::Index k,
                                   const std::vector<std::size_t>& m_values,
                                   std::size_t reps, std::uint64_t seed) {
  if (m_values.empty()) throw InvalidArgument("davis_kahan: no m values");
  DavisKahanReport report;
  report.k = static_cast<std::size_t>(k);
  report.gap = source.gap(k);
  if (!(report.gap > 0)) throw InvalidArgument("davis_kahan: eigen-gap must be > 0");
  const subspace::Subspace truth = source.top_k(k);
  const RngStream root(seed, "davis_kahan");
  for (std::size_t m : m_values) {
    if (static_cast<Eigen::Index>(m) < k)
      throw InvalidArgument("davis_kahan: m must be >= k");
    std::vector<double> distances;
    for (std::size_t r = 0; r < reps; ++r) {
      models::GradientBatch gb;
      gb.grads = source.sample(m, root.child(m_label(m, r)));
      const subspace::Subspace est = subspace::top_k_eigenspace(gb, k);
      DavisKahanRow row;
      row.m = m;
      row.replicate = r;
      row.distance = est.rank() == k ? subspace::subspace_distance(est, truth) : 1.0;
      row.error_norm =
          symmetric_spectral_norm_dense(subspace::second_moment(gb) - source.sigma());
      row.bound = 2.0 * row.error_norm / report.gap;
      row.conditional = row.error_norm <= report.gap / 2.0;
      row.satisfied = !row.conditional || row.distance <= row.bound;
      if (row.conditional) ++report.conditional_count;
      if (!row.satisfied) ++report.violations;
      distances.push_back(row.distance);
      report.rows.push_back(row);
    }
    report.m_values.push_back(m);
    report.median_distance.push_back(median_of(distances));
  }
  for (std::size_t i = 0; i + 1 < report.m_values.size(); ++i) {
    if (report.m_values[i + 1] != 4 * report.m_values[i]) continue;
    const double ratio = report.median_distance[i] / report.median_distance[i + 1];
    report.shrink_ratios.push_back(ratio);
    if (!(ratio >= report.ratio_low && ratio <= report.ratio_high)) report.ratios_pass = false;
  }
  report.pass = report.violations == 0 && report.ratios_pass;
  return report;
}

NoiseReductionReport noise_reduction(const subspace::Subspace& sub, std::size_t draws,
                                     double noise_std, std::uint64_t seed,
                                     double tolerance) {
  if (draws == 0) throw InvalidArgument("noise_reduction: draws must be >= 1");
  NoiseReductionReport report;
  report.p = sub.dim();
  report.k = sub.rank();
  report.draws = draws;
  report.tolerance = tolerance;
  const RngStream rng(seed, "noise_reduction");
  const auto p = static_cast<std::uint64_t>(sub.dim());
  std::vector<double> projected(draws), full(draws);
  for (std::size_t d = 0; d < draws; ++d) {
    const Vector b = gaussian_vector(rng, static_cast<std::size_t>(p), noise_std, d * p);
    full[d] = b.squaredNorm();
    projected[d] = (sub.basis.transpose() * b).squaredNorm();
  }
  report.mean_projected_energy = pairwise_sum(projected) / static_cast<double>(draws);
  report.mean_full_energy = pairwise_sum(full) / static_cast<double>(draws);
  report.ratio = report.mean_projected_energy / report.mean_full_energy;
  report.expected = static_cast<double>(report.k) / static_cast<double>(report.p);
  report.relative_error = std::abs(report.ratio - report.expected) / report.expected;
  report.pass = report.relative_error <= tolerance;
  return report;
}

DominanceSeries principal_dominance(const models::ModelSpec& spec,
                                    const std::vector<optim::Checkpoint>& checkpoints,
                                    const data::Dataset& full_ds,
                                    const data::Dataset& oracle_ds, Eigen::Index k) {
  DominanceSeries series;
  double total = 0.0;
  std::size_t defined = 0;
  for (const auto& cp : checkpoints) {
    const auto oracle_grads = models::per_example_gradients(spec, cp.params, oracle_ds);
    const subspace::Subspace oracle = subspace::top_k_eigenspace(oracle_grads, k);
    const Vector grad = models::mean_gradient(spec, cp.params, full_ds);
    DominancePoint point;
    point.step = cp.step;
    point.gradient_norm = grad.norm();
    const Vector principal = subspace::project(oracle, grad);
    const double par = principal.squaredNorm();
    if (point.gradient_norm > 0.0 && par > 0.0) {
      point.ratio = (grad - principal).squaredNorm() / par;
      total += *point.ratio;
      ++defined;
    }
    series.points.push_back(point);
  }
  if (defined > 0) series.average = total / static_cast<double>(defined);
  return series;
}

SpectrumTrace spectrum_trace(const models::ModelSpec& spec,
                             const std::vector<optim::Checkpoint>& checkpoints,
                             const data::Dataset& public_ds, Eigen::Index top,
                             Eigen::Index k) {
  if (top < 1 || static_cast<std::size_t>(top) > public_ds.size())
    throw InvalidArgument("spectrum_trace: need 1 <= top <= public size");
  SpectrumTrace trace;
  double inv_sum = 0.0;
  for (const auto& cp : checkpoints) {
    const auto grads = models::per_example_gradients(spec, cp.params, public_ds);
    SpectrumRow row;
    row.step = cp.step;
    row.spectrum = subspace::spectrum_summary(grads, top, k);
    const double gap = row.spectrum.eigen_gap_at_k;
    inv_sum += gap > 0 ? 1.0 / (gap * gap) : std::numeric_limits<double>::infinity();
    trace.rows.push_back(std::move(row));
  }
  if (!trace.rows.empty()) trace.inverse_gap_sq_mean = inv_sum / static_cast<double>(trace.rows.size());
  return trace;
}

GradientGeometry coordinate_decay(const Vector& gradient) {
  if (gradient.size() == 0 || gradient.cwiseAbs().maxCoeff() == 0.0)
    throw InvalidArgument("coordinate_decay: zero gradient");
  GradientGeometry geo;
  geo.sorted_abs_coordinates.resize(static_cast<std::size_t>(gradient.size()));
  for (Eigen::Index i = 0; i < gradient.size(); ++i)
    geo.sorted_abs_coordinates[static_cast<std::size_t>(i)] = std::abs(gradient[i]);
  std::sort(geo.sorted_abs_coordinates.begin(), geo.sorted_abs_coordinates.end(),
            std::greater<>());
  std::vector<double> x, y;
  for (std::size_t j = 0; j < geo.sorted_abs_coordinates.size(); ++j) {
    if (geo.sorted_abs_coordinates[j] <= 0) break;
    x.push_back(static_cast<double>(j + 1));
    y.push_back(geo.sorted_abs_coordinates[j]);
  }
  if (x.size() == 1) {
    geo.decay_constant = y[0];
    geo.decay_exponent = 0.0;
    return geo;
  }
  const double slope = log_log_slope(x, y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  geo.decay_exponent = -slope;
  geo.decay_constant = std::exp(my - slope * mx);
  return geo;
}

WidthEstimate gaussian_width_estimate(const DenseMatrix& points, std::size_t draws,
                                      std::uint64_t seed) {
  if (points.cols() == 0) throw InvalidArgument("gaussian_width: empty point set");
  if (draws < 100) throw InvalidArgument("gaussian_width: need at least 100 draws");
  const RngStream rng(seed, "gaussian_width");
  const auto p = static_cast<std::uint64_t>(points.rows());
  std::vector<double> sups(draws);
  for (std::size_t d = 0; d < draws; ++d) {
    const Vector v = gaussian_vector(rng, static_cast<std::size_t>(p), 1.0, d * p);
    sups[d] = (points.transpose() * v).maxCoeff();
  }
  const ReplicateStats s = summarize(sups);
  return {s.mean, s.std_error, draws};
}

ReferenceOptimum solve_reference(const models::ModelSpec& spec, const data::Dataset& ds,
                                 double ball_radius, double tol, std::size_t max_iter) {
  if (spec.family == models::Family::kMlp)
    throw InvalidArgument("solve_reference: only convex (linear) families are supported");
  DenseMatrix x = ds.features;
  if (spec.bias) {
    x.conservativeResize(Eigen::NoChange, x.cols() + 1);
    x.col(x.cols() - 1).setOnes();
  }
  const double s = spectral_norm(x);
  const double curvature = spec.family == models::Family::kLogistic ? 0.25 : 0.5;
  const double lipschitz = curvature * s * s / static_cast<double>(ds.size());
  const double step = 1.0 / lipschitz;

  ReferenceOptimum out;
  out.params = models::zero_params(spec);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vector g = models::mean_gradient(spec, out.params, ds);
    Vector next = out.params.values - step * g;
    optim::ball_project_inplace(next, ball_radius);
    out.gradient_mapping_norm = (out.params.values - next).norm() * lipschitz;
    out.params.values = next;
    out.iterations = it + 1;
    if (out.gradient_mapping_norm < tol) break;
  }
  out.loss = models::loss_and_accuracy(spec, out.params, ds).loss;
  return out;
}

ReplicateStats ConvergenceTable::stats(optim::Algorithm a, double epsilon) const {
  std::vector<double> values;
  for (const auto& r : rows)
    if (r.algorithm == a && (r.epsilon == epsilon || (std::isinf(r.epsilon) && std::isinf(epsilon))))
      values.push_back(r.excess_risk);
  return summarize(values);
}

models::ModelSpec convex_model(const ConvexProblem& problem) {
  models::ModelSpec spec;
  spec.family = models::Family::kLogistic;
  spec.input_dim = problem.synthetic.feature_dim;
  spec.class_count = 2;
  spec.bias = false;
  spec.init_scale = 0.0;
  return spec;
}

ConvergenceTable convergence_comparison(const ConvexProblem& problem,
                                        const std::vector<double>& epsilons,
                                        const std::vector<optim::Algorithm>& algorithms,
                                        const std::vector<std::uint64_t>& seeds) {
  if (problem.synthetic.class_count != 2)
    throw InvalidArgument("convergence_comparison: binary problems only");
  const models::ModelSpec spec = convex_model(problem);
  const data::SyntheticProblem synth = data::synthetic_lowrank(problem.synthetic);
  const data::Dataset& train_ds = synth.dataset;
  const data::Dataset public_ds =
      data::synthetic_resample(problem.synthetic, problem.public_size, problem.public_seed);

  const ReferenceOptimum optimum = solve_reference(spec, train_ds, problem.ball_radius);
  ConvergenceTable table;
  table.optimum_loss = optimum.loss;

  const std::size_t n = train_ds.size();
  const std::uint64_t total_steps =
      static_cast<std::uint64_t>(optim::steps_per_epoch(n, problem.batch_size)) * problem.epochs;
  const double q = static_cast<double>(problem.batch_size) / static_cast<double>(n);

  for (double eps : epsilons) {
    const double sigma =
        std::isinf(eps) ? 0.0 : privacy::calibrate_sigma(eps, problem.delta, q, total_steps);
    for (optim::Algorithm algorithm : algorithms) {
      for (std::uint64_t seed : seeds) {
        optim::TrainConfig cfg;
        cfg.algorithm = algorithm;
        cfg.epochs = problem.epochs;
        cfg.batch_size = problem.batch_size;
        cfg.schedule = optim::StepSchedule::kInvSqrtT;
        cfg.step_size = problem.step_scale;
        cfg.clip = problem.clip;
        cfg.sigma = algorithm == optim::Algorithm::kSgd ? 0.0 : sigma;
        cfg.delta = problem.delta;
        cfg.projection_dim = problem.projection_dim;
        cfg.ball_radius = problem.ball_radius;
        cfg.seeds = {seed, 1000 + seed, 2000 + seed, 3000 + seed};
        cfg.evaluate_each_epoch = false;
        cfg.checkpoint_capacity = 0;
        const optim::TrainResult run = optim::train(cfg, spec, train_ds, &public_ds, nullptr);
        ConvergenceRow row;
        row.algorithm = algorithm;
        row.epsilon = eps;
        row.sigma = cfg.sigma;
        row.seed = seed;
        row.final_loss = models::loss_and_accuracy(spec, run.average_params, train_ds).loss;
        row.excess_risk = row.final_loss - optimum.loss;
        table.rows.push_back(row);
      }
    }
  }
  return table;
}

}  // namespace pdpsgd::verify
