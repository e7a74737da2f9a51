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

#include "pdpsgd/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pdpsgd/error.hpp"

namespace pdpsgd::models {

namespace {

constexpr std::size_t kChunk = 512;

using ConstMap = Eigen::Map<const DenseMatrix>;
using MutMap = Eigen::Map<DenseMatrix>;

struct LayerView {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;  // meaningful only when the spec has biases
};

std::vector<LayerView> layer_views(const ModelSpec& spec) {
  const auto dims = spec.layer_dims();
  std::vector<LayerView> views;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerView v{dims[l], dims[l + 1], offset, 0};
    offset += v.in * v.out;
    if (spec.bias) {
      v.bias_offset = offset;
      offset += v.out;
    }
    views.push_back(v);
  }
  return views;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Activations and output deltas for one chunk of examples (columns).
struct Pass {
  std::vector<DenseMatrix> inputs;  // inputs[l] feeds dense layer l
  DenseMatrix logits;
  std::vector<DenseMatrix> deltas;  // dLoss/dz for each layer
};

Pass forward(const ModelSpec& spec, const std::vector<LayerView>& views,
             const Vector& params, DenseMatrix input) {
  Pass pass;
  pass.inputs.reserve(views.size());
  pass.inputs.push_back(std::move(input));
  for (std::size_t l = 0; l < views.size(); ++l) {
    const LayerView& v = views[l];
    ConstMap w(params.data() + v.weight_offset, static_cast<Eigen::Index>(v.out),
               static_cast<Eigen::Index>(v.in));
    DenseMatrix z = w * pass.inputs[l];
    if (spec.bias) {
      Eigen::Map<const Vector> b(params.data() + v.bias_offset,
                                 static_cast<Eigen::Index>(v.out));
      z.colwise() += b;
    }
    if (l + 1 == views.size()) {
      pass.logits = std::move(z);
    } else {
      pass.inputs.push_back(z.cwiseMax(0.0));
    }
  }
  return pass;
}

void check_logits(const DenseMatrix& logits, std::span<const std::size_t> indices) {
  for (Eigen::Index i = 0; i < logits.cols(); ++i)
    if (!logits.col(i).allFinite())
      throw NumericError("non-finite activations for example " +
                             std::to_string(indices[static_cast<std::size_t>(i)]),
                         static_cast<std::ptrdiff_t>(indices[static_cast<std::size_t>(i)]));
}

// Fills pass.deltas and returns per-example losses.
Vector backward(const ModelSpec& spec, const std::vector<LayerView>& views,
                const Vector& params, Pass& pass, std::span<const int> labels) {
  const Eigen::Index batch = pass.logits.cols();
  Vector losses(batch);
  DenseMatrix delta(pass.logits.rows(), batch);
  if (spec.family == Family::kLogistic) {
    for (Eigen::Index i = 0; i < batch; ++i) {
      const double z = pass.logits(0, i);
      const double y = labels[static_cast<std::size_t>(i)];
      losses[i] = softplus(z) - y * z;
      delta(0, i) = sigmoid(z) - y;
    }
  } else {
    for (Eigen::Index i = 0; i < batch; ++i) {
      const auto col = pass.logits.col(i);
      const double shift = col.maxCoeff();
      const Vector e = (col.array() - shift).exp().matrix();
      const double total = e.sum();
      const int y = labels[static_cast<std::size_t>(i)];
      losses[i] = std::log(total) + shift - col[y];
      delta.col(i) = e / total;
      delta(y, i) -= 1.0;
    }
  }
  pass.deltas.assign(views.size(), DenseMatrix());
  pass.deltas.back() = std::move(delta);
  for (std::size_t l = views.size() - 1; l > 0; --l) {
    const LayerView& v = views[l];
    ConstMap w(params.data() + v.weight_offset, static_cast<Eigen::Index>(v.out),
               static_cast<Eigen::Index>(v.in));
    DenseMatrix back = w.transpose() * pass.deltas[l];
    const DenseMatrix& act = pass.inputs[l];
    for (Eigen::Index j = 0; j < back.cols(); ++j)
      for (Eigen::Index r = 0; r < back.rows(); ++r)
        if (act(r, j) <= 0.0) back(r, j) = 0.0;
    pass.deltas[l - 1] = std::move(back);
  }
  return losses;
}

struct Chunk {
  DenseMatrix inputs;  // f x B
  std::vector<int> labels;
};

Chunk gather(const data::Dataset& ds, std::span<const std::size_t> indices) {
  Chunk c;
  c.inputs.resize(ds.features.cols(), static_cast<Eigen::Index>(indices.size()));
  c.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw InvalidArgument("example index out of range");
    c.inputs.col(static_cast<Eigen::Index>(i)) =
        ds.features.row(static_cast<Eigen::Index>(indices[i])).transpose();
    c.labels[i] = ds.labels[indices[i]];
  }
  return c;
}

void check_compatible(const ModelSpec& spec, const ParamVector& params,
                      const data::Dataset& ds) {
  spec.validate();
  if (static_cast<std::size_t>(params.values.size()) != spec.param_count())
    throw DimensionMismatch("parameter length " + std::to_string(params.values.size()) +
                            " does not match model (" +
                            std::to_string(spec.param_count()) + ")");
  if (ds.feature_dim() != spec.input_dim)
    throw DimensionMismatch("dataset feature dim does not match model input_dim");
  for (int y : ds.labels)
    if (y < 0 || y >= spec.class_count)
      throw InvalidArgument("label outside the model's class range");
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// Adds sum_i scale_i * grad_i to `out` using the rank-one layer structure.
void accumulate_weighted(const ModelSpec& spec, const std::vector<LayerView>& views,
                         const Pass& pass, const Vector& scale, Vector& out) {
  for (std::size_t l = 0; l < views.size(); ++l) {
    const LayerView& v = views[l];
    const DenseMatrix scaled = pass.deltas[l] * scale.asDiagonal();
    MutMap gw(out.data() + v.weight_offset, static_cast<Eigen::Index>(v.out),
              static_cast<Eigen::Index>(v.in));
    gw.noalias() += scaled * pass.inputs[l].transpose();
    if (spec.bias) {
      Eigen::Map<Vector> gb(out.data() + v.bias_offset, static_cast<Eigen::Index>(v.out));
      gb += scaled.rowwise().sum();
    }
  }
}

}  // namespace

const char* family_name(Family f) {
  switch (f) {
    case Family::kLogistic: return "logistic";
    case Family::kSoftmaxLinear: return "softmax_linear";
    case Family::kMlp: return "mlp";
  }
  return "unknown";
}

Family parse_family(const std::string& name) {
  if (name == "logistic") return Family::kLogistic;
  if (name == "softmax_linear") return Family::kSoftmaxLinear;
  if (name == "mlp") return Family::kMlp;
  throw InvalidArgument("unknown model family '" + name + "'");
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw InvalidArgument("model: input_dim must be positive");
  if (activation != "relu") throw InvalidArgument("model: only relu activation is supported");
  if (family == Family::kLogistic && class_count != 2)
    throw InvalidArgument("model: logistic requires class_count = 2");
  if (class_count < 2) throw InvalidArgument("model: class_count must be >= 2");
  if (family != Family::kMlp && !hidden_widths.empty())
    throw InvalidArgument("model: hidden layers require family mlp");
  if (family == Family::kMlp && hidden_widths.empty())
    throw InvalidArgument("model: mlp needs at least one hidden layer");
  for (std::size_t w : hidden_widths)
    if (w == 0) throw InvalidArgument("model: layer widths must be positive");
  if (!(init_scale >= 0) || !std::isfinite(init_scale))
    throw InvalidArgument("model: init_scale must be finite and >= 0");
}

std::vector<std::size_t> ModelSpec::layer_dims() const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_widths.begin(), hidden_widths.end());
  dims.push_back(family == Family::kLogistic ? 1 : static_cast<std::size_t>(class_count));
  return dims;
}

std::size_t ModelSpec::param_count() const {
  const auto dims = layer_dims();
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    p += dims[l] * dims[l + 1] + (bias ? dims[l + 1] : 0);
  return p;
}

std::size_t LayerShape::size() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

ParamVector zero_params(const ModelSpec& spec) {
  spec.validate();
  ParamVector p;
  p.values = Vector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  const auto views = layer_views(spec);
  for (std::size_t l = 0; l < views.size(); ++l) {
    const std::string prefix = "dense" + std::to_string(l);
    p.shape_map.push_back({prefix + ".weight", {views[l].out, views[l].in}});
    if (spec.bias) p.shape_map.push_back({prefix + ".bias", {views[l].out}});
  }
  return p;
}

ParamVector init_params(const ModelSpec& spec) {
  ParamVector p = zero_params(spec);
  const RngStream rng(spec.init_seed, "init");
  std::uint64_t offset = 0;
  for (const LayerView& v : layer_views(spec)) {
    const double std = spec.init_scale / std::sqrt(static_cast<double>(v.in));
    const std::size_t count = v.in * v.out;
    p.values.segment(static_cast<Eigen::Index>(v.weight_offset),
                     static_cast<Eigen::Index>(count)) =
        gaussian_vector(rng, count, std, offset);
    offset += count;
  }
  return p;
}

LossAccuracy loss_and_accuracy(const ModelSpec& spec, const ParamVector& params,
                               const data::Dataset& ds) {
  check_compatible(spec, params, ds);
  if (ds.size() == 0) throw InvalidArgument("loss_and_accuracy: empty dataset");
  const auto views = layer_views(spec);
  const auto all = iota_indices(ds.size());
  std::vector<double> losses;
  losses.reserve(ds.size());
  std::size_t correct = 0;
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto idx = std::span(all).subspan(start, std::min(kChunk, all.size() - start));
    Chunk c = gather(ds, idx);
    Pass pass = forward(spec, views, params.values, std::move(c.inputs));
    check_logits(pass.logits, idx);
    const Vector l = backward(spec, views, params.values, pass, c.labels);
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      losses.push_back(l[i]);
      int pred;
      if (spec.family == Family::kLogistic) {
        pred = pass.logits(0, i) > 0 ? 1 : 0;
      } else {
        Eigen::Index best;
        pass.logits.col(i).maxCoeff(&best);
        pred = static_cast<int>(best);
      }
      if (pred == c.labels[static_cast<std::size_t>(i)]) ++correct;
    }
  }
  const double n = static_cast<double>(ds.size());
  return {pairwise_sum(losses) / n, static_cast<double>(correct) / n};
}

double example_loss(const ModelSpec& spec, const Vector& params,
                    const Eigen::Ref<const Vector>& x, int label) {
  const auto views = layer_views(spec);
  Pass pass = forward(spec, views, params, DenseMatrix(x));
  const int labels[1] = {label};
  return backward(spec, views, params, pass, labels)[0];
}

GradientBatch per_example_gradients(const ModelSpec& spec, const ParamVector& params,
                                    const data::Dataset& ds,
                                    std::span<const std::size_t> indices) {
  check_compatible(spec, params, ds);
  if (indices.empty()) throw InvalidArgument("per_example_gradients: empty batch");
  const auto views = layer_views(spec);
  GradientBatch gb;
  gb.grads.resize(params.values.size(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto idx = indices.subspan(start, std::min(kChunk, indices.size() - start));
    Chunk c = gather(ds, idx);
    Pass pass = forward(spec, views, params.values, std::move(c.inputs));
    check_logits(pass.logits, idx);
    backward(spec, views, params.values, pass, c.labels);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto col_index = static_cast<Eigen::Index>(start + i);
      const auto ii = static_cast<Eigen::Index>(i);
      double* col = gb.grads.col(col_index).data();
      for (std::size_t l = 0; l < views.size(); ++l) {
        const LayerView& v = views[l];
        MutMap gw(col + v.weight_offset, static_cast<Eigen::Index>(v.out),
                  static_cast<Eigen::Index>(v.in));
        gw.noalias() = pass.deltas[l].col(ii) * pass.inputs[l].col(ii).transpose();
        if (spec.bias) {
          Eigen::Map<Vector>(col + v.bias_offset, static_cast<Eigen::Index>(v.out)) =
              pass.deltas[l].col(ii);
        }
      }
    }
  }
  return gb;
}

GradientBatch per_example_gradients(const ModelSpec& spec, const ParamVector& params,
                                    const data::Dataset& ds) {
  const auto all = iota_indices(ds.size());
  return per_example_gradients(spec, params, ds, all);
}

Vector mean_gradient(const ModelSpec& spec, const ParamVector& params,
                     const data::Dataset& ds) {
  check_compatible(spec, params, ds);
  if (ds.size() == 0) throw InvalidArgument("mean_gradient: empty dataset");
  const auto views = layer_views(spec);
  const auto all = iota_indices(ds.size());
  Vector total = Vector::Zero(params.values.size());
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto idx = std::span(all).subspan(start, std::min(kChunk, all.size() - start));
    Chunk c = gather(ds, idx);
    Pass pass = forward(spec, views, params.values, std::move(c.inputs));
    check_logits(pass.logits, idx);
    backward(spec, views, params.values, pass, c.labels);
    accumulate_weighted(spec, views, pass,
                        Vector::Ones(static_cast<Eigen::Index>(idx.size())), total);
  }
  return total / static_cast<double>(ds.size());
}

GradientBatch group_micro_batches(const GradientBatch& gb, std::size_t micro_batch_size) {
  if (micro_batch_size == 0) throw InvalidArgument("micro_batch_size must be >= 1");
  if (gb.clipped) throw InvalidArgument("group_micro_batches: batch already clipped");
  if (micro_batch_size == 1) return gb;
  const Eigen::Index m = static_cast<Eigen::Index>(micro_batch_size);
  const Eigen::Index groups = (gb.count() + m - 1) / m;
  GradientBatch out;
  out.grads.resize(gb.dim(), groups);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const Eigen::Index begin = g * m;
    const Eigen::Index width = std::min(m, gb.count() - begin);
    out.grads.col(g) = gb.grads.middleCols(begin, width).rowwise().sum() /
                       static_cast<double>(width);
  }
  return out;
}

GradientBatch clip_gradients(const GradientBatch& gb, double clip_bound) {
  if (!(clip_bound > 0)) throw InvalidArgument("clip_gradients: C must be > 0");
  if (gb.clipped) throw InvalidArgument("clip_gradients: batch already clipped");
  GradientBatch out = gb;
  for (Eigen::Index i = 0; i < out.count(); ++i) {
    const double norm = out.grads.col(i).norm();
    if (norm > clip_bound) out.grads.col(i) *= clip_bound / norm;
  }
  out.clipped = true;
  out.clip_bound = clip_bound;
  return out;
}

ClippedSum clipped_gradient_sum(const ModelSpec& spec, const ParamVector& params,
                                const data::Dataset& ds,
                                std::span<const std::size_t> indices,
                                double clip_bound, std::size_t micro_batch_size) {
  check_compatible(spec, params, ds);
  if (!(clip_bound > 0)) throw InvalidArgument("clipped_gradient_sum: C must be > 0");
  if (micro_batch_size == 0) throw InvalidArgument("micro_batch_size must be >= 1");
  const auto views = layer_views(spec);
  ClippedSum result;
  result.sum = Vector::Zero(params.values.size());
  // Chunks hold whole micro-batches so groups never straddle a boundary.
  const std::size_t chunk = std::max<std::size_t>(1, kChunk / micro_batch_size) *
                            micro_batch_size;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto idx = indices.subspan(start, std::min(chunk, indices.size() - start));
    Chunk c = gather(ds, idx);
    Pass pass = forward(spec, views, params.values, std::move(c.inputs));
    check_logits(pass.logits, idx);
    backward(spec, views, params.values, pass, c.labels);

    const auto batch = static_cast<Eigen::Index>(idx.size());
    // Gram matrices of the factors: <g_i, g_j> = sum_l <d_i, d_j> (<a_i, a_j> + 1).
    Vector weights(batch);
    const auto mb = static_cast<Eigen::Index>(micro_batch_size);
    for (Eigen::Index g0 = 0; g0 < batch; g0 += mb) {
      const Eigen::Index width = std::min(mb, batch - g0);
      double sq = 0.0;
      for (std::size_t l = 0; l < views.size(); ++l) {
        const auto d = pass.deltas[l].middleCols(g0, width);
        const auto a = pass.inputs[l].middleCols(g0, width);
        DenseMatrix ga = a.transpose() * a;
        if (spec.bias) ga.array() += 1.0;
        sq += (d.transpose() * d).cwiseProduct(ga).sum();
      }
      const double norm = std::sqrt(std::max(sq, 0.0)) / static_cast<double>(width);
      result.max_unit_norm = std::max(result.max_unit_norm, norm);
      const double scale =
          (norm > clip_bound ? clip_bound / norm : 1.0) / static_cast<double>(width);
      weights.segment(g0, width).setConstant(scale);
      ++result.units;
    }
    accumulate_weighted(spec, views, pass, weights, result.sum);
  }
  return result;
}

}  // namespace pdpsgd::models
