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
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pdpsgd/core_math.hpp"

namespace pdpsgd::data {

// Row i of `features` is example i.
struct Dataset {
  DenseMatrix features;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }

  // Throws InvalidArgument when the invariants do not hold.
  void validate() const;
};

// Rows selected by `indices`, in that order.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

// IDX (big-endian) image/label pair. Pixels are scaled to [0, 1].
// Distinct errors: IdxMagicError, IdxTruncatedError, IdxCountMismatchError.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// Writes a 3-dimensional image file (count x rows x cols) and a label file.
// Features are rescaled by 255 and rounded, so only datasets whose pixels
// are multiples of 1/255 round-trip exactly.
void write_idx(const Dataset& ds, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

struct SyntheticSpec {
  std::size_t feature_dim = 0;
  std::size_t n = 0;
  std::size_t rank = 0;
  double label_noise = 0.0;
  int class_count = 2;
  std::uint64_t seed = 0;
};

// Planted low-rank problem. Features are x = A u with A a fixed
// feature_dim x rank orthonormal frame and u ~ N(0, I_rank); labels come from
// a planted weight inside span(A), flipped with probability label_noise.
struct SyntheticProblem {
  Dataset dataset;
  DenseMatrix frame;          // A, feature_dim x rank, orthonormal columns
  DenseMatrix planted_weights;  // feature_dim x (1 for binary, else classes)
};

SyntheticProblem synthetic_lowrank(const SyntheticSpec& spec);

// Draws a fresh sample from the same planted problem (same frame and planted
// weights) using `sample_seed`. Used to build public and test sets.
Dataset synthetic_resample(const SyntheticSpec& spec, std::size_t n,
                           std::uint64_t sample_seed);

// Planted classifier predictions: fraction of rows it labels correctly.
double planted_accuracy(const SyntheticProblem& problem);

struct SplitSpec {
  std::size_t private_size = 0;
  std::size_t public_size = 0;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> public_indices;
  std::vector<std::size_t> private_indices;
  std::vector<std::size_t> remainder;  // neither public nor private
};

// Uniform sampling without replacement from [0, source_size).
SplitIndices split_indices(std::size_t source_size, const SplitSpec& spec);

struct PublicPrivate {
  Dataset public_set;
  Dataset private_set;
};

PublicPrivate split_public_private(const Dataset& ds, const SplitSpec& spec);

}  // namespace pdpsgd::data
