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

#include "pdpsgd/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pdpsgd/error.hpp"

namespace pdpsgd::optim {

namespace {

double step_size_for(const TrainConfig& config, std::uint64_t total_steps) {
  if (config.schedule == StepSchedule::kConstant) return config.step_size;
  return config.step_size / std::sqrt(static_cast<double>(std::max<std::uint64_t>(total_steps, 1)));
}

std::vector<std::size_t> sample_batch(const TrainConfig& config, std::size_t n,
                                      const RngStream& rng, std::uint64_t step) {
  std::vector<std::size_t> batch;
  if (config.sampling == Sampling::kWithReplacement) {
    batch.resize(config.batch_size);
    const std::uint64_t base = step * config.batch_size;
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform(base + i) * static_cast<double>(n));
      batch[i] = std::min(j, n - 1);
    }
  } else {
    const double q = static_cast<double>(config.batch_size) / static_cast<double>(n);
    const std::uint64_t base = step * n;
    for (std::size_t i = 0; i < n; ++i)
      if (rng.uniform(base + i) < q) batch.push_back(i);
  }
  return batch;
}

// Reservoir sampling (algorithm R) over eligible iterates.
class CheckpointReservoir {
 public:
  CheckpointReservoir(std::size_t capacity, RngStream rng)
      : capacity_(capacity), rng_(std::move(rng)) {}

  void offer(std::uint64_t step, const models::ParamVector& params) {
    ++seen_;
    if (capacity_ == 0) return;
    if (items_.size() < capacity_) {
      items_.push_back({step, params});
      return;
    }
    const auto j = static_cast<std::size_t>(rng_.uniform(seen_) * static_cast<double>(seen_));
    if (j < capacity_) items_[j] = {step, params};
  }

  std::vector<Checkpoint> take() {
    std::sort(items_.begin(), items_.end(),
              [](const Checkpoint& a, const Checkpoint& b) { return a.step < b.step; });
    return std::move(items_);
  }

 private:
  std::size_t capacity_;
  RngStream rng_;
  std::uint64_t seen_ = 0;
  std::vector<Checkpoint> items_;
};

}  // namespace

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kSgd: return "sgd";
    case Algorithm::kDpSgd: return "dp_sgd";
    case Algorithm::kPdpSgd: return "pdp_sgd";
    case Algorithm::kRpdpSgd: return "rpdp_sgd";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "sgd") return Algorithm::kSgd;
  if (name == "dp_sgd") return Algorithm::kDpSgd;
  if (name == "pdp_sgd") return Algorithm::kPdpSgd;
  if (name == "rpdp_sgd") return Algorithm::kRpdpSgd;
  throw ConfigError("unknown algorithm '" + name + "'");
}

const char* schedule_name(StepSchedule s) {
  return s == StepSchedule::kConstant ? "constant" : "inv_sqrt_T";
}

StepSchedule parse_schedule(const std::string& name) {
  if (name == "constant") return StepSchedule::kConstant;
  if (name == "inv_sqrt_T") return StepSchedule::kInvSqrtT;
  throw ConfigError("unknown step-size schedule '" + name + "'");
}

const char* sampling_name(Sampling s) {
  return s == Sampling::kWithReplacement ? "with_replacement" : "poisson";
}

Sampling parse_sampling(const std::string& name) {
  if (name == "with_replacement") return Sampling::kWithReplacement;
  if (name == "poisson") return Sampling::kPoisson;
  throw ConfigError("unknown sampling mode '" + name + "'");
}

Vector noisy_gradient(const Vector& clipped_sum, double units, double clip,
                      double sigma, const RngStream& noise, std::uint64_t step) {
  if (!(units > 0)) throw InvalidArgument("noisy_gradient: units must be > 0");
  if (sigma < 0) throw InvalidArgument("noisy_gradient: sigma must be >= 0");
  Vector g = clipped_sum;
  if (sigma > 0) {
    const auto p = static_cast<std::uint64_t>(g.size());
    g += gaussian_vector(noise, static_cast<std::size_t>(p), sigma * clip, step * p);
  }
  return g / units;
}

models::ParamVector dp_step(const models::ParamVector& params,
                            const models::GradientBatch& clipped, double clip,
                            double sigma, double eta, const RngStream& noise,
                            std::uint64_t step) {
  if (sigma > 0 && !clipped.clipped)
    throw InvalidArgument("dp_step: unclipped batch with sigma > 0");
  if (clipped.clipped && clipped.clip_bound != clip)
    throw InvalidArgument("dp_step: batch clip bound differs from C");
  if (clipped.dim() != params.size()) throw DimensionMismatch("dp_step: gradient length");
  const Vector sum = clipped.grads.rowwise().sum();
  models::ParamVector out = params;
  out.values -= eta * noisy_gradient(sum, static_cast<double>(clipped.count()), clip, sigma,
                                     noise, step);
  return out;
}

models::ParamVector pdp_step(const models::ParamVector& params,
                             const models::GradientBatch& clipped,
                             const subspace::Subspace& sub, double clip, double sigma,
                             double eta, const RngStream& noise, std::uint64_t step) {
  if (sigma > 0 && !clipped.clipped)
    throw InvalidArgument("pdp_step: unclipped batch with sigma > 0");
  if (clipped.clipped && clipped.clip_bound != clip)
    throw InvalidArgument("pdp_step: batch clip bound differs from C");
  if (clipped.dim() != params.size()) throw DimensionMismatch("pdp_step: gradient length");
  if (sub.dim() != params.size()) throw DimensionMismatch("pdp_step: subspace dimension");
  const Vector sum = clipped.grads.rowwise().sum();
  const Vector g = noisy_gradient(sum, static_cast<double>(clipped.count()), clip, sigma,
                                  noise, step);
  models::ParamVector out = params;
  out.values -= eta * subspace::project(sub, g);
  return out;
}

void ball_project_inplace(Vector& w, double radius) {
  if (!(radius > 0)) throw InvalidArgument("ball_project: radius must be > 0");
  const double norm = w.norm();
  if (norm > radius) w *= radius / norm;
}

models::ParamVector ball_project(const models::ParamVector& w, double radius) {
  models::ParamVector out = w;
  ball_project_inplace(out.values, radius);
  return out;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  return (n + batch_size - 1) / batch_size;
}

void validate(const TrainConfig& config, const models::ModelSpec& spec,
              const data::Dataset& private_ds, const data::Dataset* public_ds) {
  try {
    spec.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (private_ds.size() == 0) throw ConfigError("private dataset is empty");
  if (private_ds.feature_dim() != spec.input_dim)
    throw ConfigError("private dataset feature dim does not match model input_dim");
  if (config.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (config.sampling == Sampling::kPoisson && config.batch_size > private_ds.size())
    throw ConfigError("poisson sampling needs batch_size <= n");
  if (!(config.sigma >= 0) || !std::isfinite(config.sigma))
    throw ConfigError("sigma must be finite and >= 0");
  if (!(config.step_size > 0) || !std::isfinite(config.step_size))
    throw ConfigError("step_size must be finite and > 0");
  if (!(config.clip > 0)) throw ConfigError("clip must be > 0 (or infinite to disable)");
  if (config.algorithm != Algorithm::kSgd && !config.clipping_enabled())
    throw ConfigError("private algorithms require a finite clip bound");
  if (config.sigma > 0 && !config.clipping_enabled())
    throw ConfigError("sigma > 0 requires clipping");
  if (config.micro_batch_size == 0) throw ConfigError("micro_batch_size must be >= 1");
  if (config.projection_update_every == 0)
    throw ConfigError("projection_update_every must be >= 1");
  if (config.projection_start_epoch == 0)
    throw ConfigError("projection_start_epoch is 1-based");
  if (config.ball_radius && !(*config.ball_radius > 0))
    throw ConfigError("ball_radius must be > 0");
  if (config.sigma > 0 && !(config.delta > 0 && config.delta < 1))
    throw ConfigError("delta must be in (0, 1)");
  if (config.checkpoint_every == 0) throw ConfigError("checkpoint_every must be >= 1");
  const std::size_t p = spec.param_count();
  if (config.projects()) {
    if (config.projection_dim < 1) throw ConfigError("projection_dim k must be >= 1");
    if (config.projection_dim > p)
      throw ConfigError("projection_dim k = " + std::to_string(config.projection_dim) +
                        " exceeds parameter count p = " + std::to_string(p));
  }
  if (config.algorithm == Algorithm::kPdpSgd) {
    if (public_ds == nullptr || public_ds->size() == 0)
      throw ConfigError("pdp_sgd requires a public dataset");
    if (public_ds->feature_dim() != spec.input_dim)
      throw ConfigError("public dataset feature dim does not match model input_dim");
    if (config.projection_dim > public_ds->size())
      throw ConfigError("projection_dim k exceeds the public sample size m");
  }
}

TrainResult train(const TrainConfig& config, const models::ModelSpec& model_spec,
                  const data::Dataset& private_ds, const data::Dataset* public_ds,
                  const data::Dataset* test_ds) {
  validate(config, model_spec, private_ds, public_ds);
  models::ModelSpec spec = model_spec;
  spec.init_seed = config.seeds.init;

  const std::size_t n = private_ds.size();
  const std::size_t spe = steps_per_epoch(n, config.batch_size);
  const std::uint64_t total_steps = static_cast<std::uint64_t>(spe) * config.epochs;
  const double eta = step_size_for(config, total_steps);
  const double q = std::min(1.0, static_cast<double>(config.batch_size) / static_cast<double>(n));
  const std::size_t mb = config.micro_batch_size;
  const double poisson_units =
      static_cast<double>((config.batch_size + mb - 1) / mb);
  const std::uint64_t projection_start =
      static_cast<std::uint64_t>(config.projection_start_epoch - 1) * spe;

  const RngStream subsample_rng(config.seeds.subsample, "subsample");
  const RngStream noise_rng(config.seeds.noise, "noise");
  CheckpointReservoir reservoir(config.checkpoint_capacity,
                                RngStream(config.seeds.subsample, "checkpoint_reservoir"));

  TrainResult result;
  result.initial_params = models::init_params(spec);
  if (config.ball_radius) ball_project_inplace(result.initial_params.values, *config.ball_radius);
  models::ParamVector w = result.initial_params;
  Vector running_sum = Vector::Zero(w.size());

  std::optional<subspace::Subspace> active;
  std::size_t refreshes = 0;
  double last_gap = std::numeric_limits<double>::quiet_NaN();

  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t s = 0; s < spe; ++s, ++step) {
      const bool projecting = config.projects() && step >= projection_start;
      if (projecting &&
          (step - projection_start) % config.projection_update_every == 0) {
        if (config.algorithm == Algorithm::kPdpSgd) {
          const auto public_grads = models::per_example_gradients(spec, w, *public_ds);
          active = subspace::top_k_eigenspace(
              public_grads, static_cast<Eigen::Index>(config.projection_dim));
          const auto gap = subspace::eigen_gap(
              [&] {
                auto ev = active->eigenvalues;
                ev.push_back(active->next_eigenvalue);
                return ev;
              }(),
              config.projection_dim);
          last_gap = gap.gap;
          if (gap.degenerate) ++result.gap_degenerate_refreshes;
        } else {
          const std::uint64_t proj_seed =
              RngStream(config.seeds.projection, "rpdp").bits(refreshes);
          active = subspace::random_projection(
              w.size(), static_cast<Eigen::Index>(config.projection_dim), proj_seed);
        }
        active->step_created = step;
        ++refreshes;
      }

      const auto batch = sample_batch(config, n, subsample_rng, step);
      Vector sum;
      double units;
      if (config.clipping_enabled()) {
        models::ClippedSum cs = batch.empty()
                                    ? models::ClippedSum{Vector::Zero(w.size()), 0, 0.0}
                                    : models::clipped_gradient_sum(spec, w, private_ds, batch,
                                                                   config.clip, mb);
        sum = std::move(cs.sum);
        units = config.sampling == Sampling::kPoisson ? poisson_units
                                                      : static_cast<double>(cs.units);
      } else {
        const auto gb = models::per_example_gradients(spec, w, private_ds, batch);
        sum = gb.grads.rowwise().sum();
        units = static_cast<double>(batch.size());
      }
      Vector g = noisy_gradient(sum, units, config.clip, config.sigma, noise_rng, step);
      if (projecting) g = subspace::project(*active, g);
      w.values -= eta * g;
      if (config.ball_radius) ball_project_inplace(w.values, *config.ball_radius);

      running_sum += w.values;
      if ((step + 1) % config.checkpoint_every == 0) reservoir.offer(step + 1, w);
    }

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.subspace_refresh_count = refreshes;
    m.eigen_gap = last_gap;
    if (config.sigma > 0) {
      m.epsilon_so_far =
          privacy::compose_and_convert({q, config.sigma, step, config.delta}).epsilon;
    }
    if (config.evaluate_each_epoch) {
      const auto train_metrics = models::loss_and_accuracy(spec, w, private_ds);
      m.train_loss = train_metrics.loss;
      m.train_acc = train_metrics.accuracy;
      if (test_ds != nullptr && test_ds->size() > 0) {
        const auto test_metrics = models::loss_and_accuracy(spec, w, *test_ds);
        m.test_loss = test_metrics.loss;
        m.test_acc = test_metrics.accuracy;
      }
      const Vector full_grad = models::mean_gradient(spec, w, private_ds);
      m.grad_norm = full_grad.norm();
      if (active) m.principal_grad_norm = subspace::project(*active, full_grad).norm();
    }
    result.per_epoch.push_back(m);
  }

  result.steps = step;
  result.final_params = w;
  result.average_params = w;
  result.average_params.values =
      step == 0 ? result.initial_params.values : Vector(running_sum / static_cast<double>(step));
  result.checkpoints = reservoir.take();
  if (config.sigma > 0)
    result.ledger = privacy::compose_and_convert({q, config.sigma, step, config.delta});
  return result;
}

const Checkpoint& sample_iterate(const TrainResult& result, std::uint64_t seed) {
  if (result.checkpoints.empty()) throw InvalidArgument("sample_iterate: no checkpoints");
  const RngStream rng(seed, "sample_iterate");
  const auto j = static_cast<std::size_t>(
      rng.uniform(0) * static_cast<double>(result.checkpoints.size()));
  return result.checkpoints[std::min(j, result.checkpoints.size() - 1)];
}

}  // namespace pdpsgd::optim
