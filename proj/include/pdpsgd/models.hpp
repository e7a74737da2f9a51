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
#include <span>
#include <string>
#include <vector>

#include "pdpsgd/core_math.hpp"
#include "pdpsgd/data.hpp"

namespace pdpsgd::models {

enum class Family { kLogistic, kSoftmaxLinear, kMlp };

const char* family_name(Family f);
Family parse_family(const std::string& name);

struct ModelSpec {
  Family family = Family::kSoftmaxLinear;
  std::size_t input_dim = 0;
  int class_count = 2;
  // Hidden layer widths; must be empty for the linear families.
  std::vector<std::size_t> hidden_widths;
  std::string activation = "relu";
  bool bias = true;
  double init_scale = 1.0;
  std::uint64_t init_seed = 0;

  void validate() const;
  // Units per layer, input first. Logistic has a single output unit.
  std::vector<std::size_t> layer_dims() const;
  std::size_t param_count() const;
};

struct LayerShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t size() const;
};

// Flat parameter vector. Each dense layer contributes its weight matrix
// (out x in, column-major) followed by its bias when enabled.
struct ParamVector {
  Vector values;
  std::vector<LayerShape> shape_map;

  Eigen::Index size() const { return values.size(); }
};

ParamVector zero_params(const ModelSpec& spec);
// Gaussian weights with std init_scale / sqrt(fan_in), zero biases.
ParamVector init_params(const ModelSpec& spec);

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and argmax accuracy over the whole dataset.
LossAccuracy loss_and_accuracy(const ModelSpec& spec, const ParamVector& params,
                               const data::Dataset& ds);

// Cross-entropy of a single example.
double example_loss(const ModelSpec& spec, const Vector& params,
                    const Eigen::Ref<const Vector>& x, int label);

// p x B block, one column per example (or per micro-batch once grouped).
struct GradientBatch {
  DenseMatrix grads;
  bool clipped = false;
  double clip_bound = 0.0;

  Eigen::Index dim() const { return grads.rows(); }
  Eigen::Index count() const { return grads.cols(); }
};

// Exact per-example gradients of the examples selected by `indices`.
GradientBatch per_example_gradients(const ModelSpec& spec, const ParamVector& params,
                                    const data::Dataset& ds,
                                    std::span<const std::size_t> indices);
GradientBatch per_example_gradients(const ModelSpec& spec, const ParamVector& params,
                                    const data::Dataset& ds);

// Gradient of the mean loss over the whole dataset.
Vector mean_gradient(const ModelSpec& spec, const ParamVector& params,
                     const data::Dataset& ds);

// Replaces consecutive groups of `micro_batch_size` columns by their mean.
// The trailing group may be smaller.
GradientBatch group_micro_batches(const GradientBatch& gb, std::size_t micro_batch_size);

// Column g becomes g * min(1, C / |g|).
GradientBatch clip_gradients(const GradientBatch& gb, double clip_bound);

struct ClippedSum {
  Vector sum;           // sum of the clipped unit gradients
  std::size_t units = 0;  // examples, or micro-batches when grouped
  double max_unit_norm = 0.0;  // largest norm before clipping
};

// Same result as grouping, clipping and summing the columns of
// per_example_gradients, without materializing the p x B block. Per-unit
// norms come from the layer factorization of dense-layer gradients.
ClippedSum clipped_gradient_sum(const ModelSpec& spec, const ParamVector& params,
                                const data::Dataset& ds,
                                std::span<const std::size_t> indices,
                                double clip_bound, std::size_t micro_batch_size = 1);

}  // namespace pdpsgd::models
