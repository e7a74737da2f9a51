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

#include "pdpsgd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "pdpsgd/error.hpp"

namespace pdpsgd::data {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }

  const unsigned char* take(std::size_t n) {
    need(n);
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw IdxTruncatedError(name_ + ": truncated IDX file");
  }

  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

// Orthonormal frame and planted weights, both determined by spec.seed only.
struct Planted {
  DenseMatrix frame;
  DenseMatrix weights;
};

Planted make_planted(const SyntheticSpec& spec) {
  if (spec.rank == 0 || spec.rank > spec.feature_dim)
    throw InvalidArgument("synthetic_lowrank: need 1 <= rank <= feature_dim");
  if (spec.class_count < 2)
    throw InvalidArgument("synthetic_lowrank: class_count must be >= 2");
  if (spec.label_noise < 0 || spec.label_noise > 1)
    throw InvalidArgument("synthetic_lowrank: label_noise must be in [0, 1]");
  RngStream root(spec.seed, "synthetic");
  const DenseMatrix raw =
      gaussian_matrix(root.child("frame"), spec.feature_dim, spec.rank);
  Eigen::HouseholderQR<DenseMatrix> qr(raw);
  Planted planted;
  planted.frame = qr.householderQ() *
                  DenseMatrix::Identity(static_cast<Eigen::Index>(spec.feature_dim),
                                        static_cast<Eigen::Index>(spec.rank));
  const std::size_t outputs = spec.class_count == 2 ? 1 : spec.class_count;
  DenseMatrix coeffs = gaussian_matrix(root.child("planted"), spec.rank, outputs);
  for (Eigen::Index c = 0; c < coeffs.cols(); ++c) coeffs.col(c).normalize();
  planted.weights = planted.frame * coeffs;
  return planted;
}

int planted_label(const DenseMatrix& weights, const Eigen::Ref<const Vector>& x) {
  if (weights.cols() == 1) return weights.col(0).dot(x) > 0 ? 1 : 0;
  Eigen::Index best;
  (weights.transpose() * x).maxCoeff(&best);
  return static_cast<int>(best);
}

Dataset draw(const SyntheticSpec& spec, const Planted& planted, std::size_t n,
             const RngStream& rng) {
  if (n == 0) throw InvalidArgument("synthetic_lowrank: n must be >= 1");
  const DenseMatrix latent = gaussian_matrix(rng.child("latent"), spec.rank, n);
  Dataset ds;
  ds.class_count = spec.class_count;
  ds.features = (planted.frame * latent).transpose();
  ds.labels.resize(n);
  const RngStream flip = rng.child("label_noise");
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    int label = planted_label(planted.weights, ds.features.row(row).transpose());
    if (flip.uniform(2 * i) < spec.label_noise) {
      if (spec.class_count == 2) {
        label = 1 - label;
      } else {
        const int shift =
            1 + static_cast<int>(flip.uniform(2 * i + 1) * (spec.class_count - 1));
        label = (label + std::min(shift, spec.class_count - 1)) % spec.class_count;
      }
    }
    ds.labels[i] = label;
  }
  return ds;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw InvalidArgument("dataset is empty");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DimensionMismatch("dataset: feature rows != label count");
  if (class_count < 1) throw InvalidArgument("dataset: class_count must be >= 1");
  for (int y : labels)
    if (y < 0 || y >= class_count)
      throw InvalidArgument("dataset: label outside [0, class_count)");
  if (!features.allFinite()) throw InvalidArgument("dataset: non-finite features");
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.class_count = ds.class_count;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), ds.features.cols());
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw InvalidArgument("subset: index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) =
        ds.features.row(static_cast<Eigen::Index>(indices[i]));
    out.labels[i] = ds.labels[indices[i]];
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto image_bytes = read_all(images_path);
  const auto label_bytes = read_all(labels_path);

  ByteReader images(image_bytes, images_path.string());
  const std::uint32_t image_magic = images.u32();
  if (image_magic != kImagesMagic)
    throw IdxMagicError(images_path.string() + ": bad image magic");
  const std::uint32_t count = images.u32();
  const std::uint32_t rows = images.u32();
  const std::uint32_t cols = images.u32();
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  const unsigned char* payload = images.take(pixels * count);

  ByteReader labels(label_bytes, labels_path.string());
  if (labels.u32() != kLabelsMagic)
    throw IdxMagicError(labels_path.string() + ": bad label magic");
  const std::uint32_t label_count = labels.u32();
  if (label_count != count)
    throw IdxCountMismatchError("IDX image count " + std::to_string(count) +
                                " != label count " + std::to_string(label_count));
  const unsigned char* label_payload = labels.take(label_count);

  Dataset ds;
  ds.features.resize(count, static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < pixels; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          payload[i * pixels + j] / 255.0;
  ds.labels.assign(label_payload, label_payload + label_count);
  ds.class_count = ds.labels.empty()
                       ? 0
                       : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

void write_idx(const Dataset& ds, std::size_t image_rows, std::size_t image_cols,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (image_rows * image_cols != ds.feature_dim())
    throw DimensionMismatch("write_idx: image shape does not match feature dim");
  std::ofstream images(images_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!images || !labels) throw Error("write_idx: cannot open output files");
  put_u32(images, kImagesMagic);
  put_u32(images, static_cast<std::uint32_t>(ds.size()));
  put_u32(images, static_cast<std::uint32_t>(image_rows));
  put_u32(images, static_cast<std::uint32_t>(image_cols));
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      const double v = std::clamp(ds.features(i, j), 0.0, 1.0);
      images.put(static_cast<char>(std::lround(v * 255.0)));
    }
  put_u32(labels, kLabelsMagic);
  put_u32(labels, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) labels.put(static_cast<char>(y));
}

SyntheticProblem synthetic_lowrank(const SyntheticSpec& spec) {
  Planted planted = make_planted(spec);
  SyntheticProblem problem;
  problem.dataset = draw(spec, planted, spec.n, RngStream(spec.seed, "synthetic/sample"));
  problem.frame = std::move(planted.frame);
  problem.planted_weights = std::move(planted.weights);
  return problem;
}

Dataset synthetic_resample(const SyntheticSpec& spec, std::size_t n,
                           std::uint64_t sample_seed) {
  const Planted planted = make_planted(spec);
  return draw(spec, planted, n, RngStream(sample_seed, "synthetic/resample"));
}

double planted_accuracy(const SyntheticProblem& problem) {
  const Dataset& ds = problem.dataset;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int pred = planted_label(
        problem.planted_weights,
        ds.features.row(static_cast<Eigen::Index>(i)).transpose());
    if (pred == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

SplitIndices split_indices(std::size_t source_size, const SplitSpec& spec) {
  if (spec.private_size + spec.public_size > source_size)
    throw InvalidArgument("split: private_size + public_size exceeds source size " +
                          std::to_string(source_size));
  std::vector<std::size_t> perm(source_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  const RngStream rng(spec.seed, "split");
  // Fisher-Yates driven by indexed uniforms.
  for (std::size_t i = source_size; i > 1; --i) {
    const auto j = std::min(
        static_cast<std::size_t>(rng.uniform(i - 1) * static_cast<double>(i)), i - 1);
    std::swap(perm[i - 1], perm[j]);
  }
  SplitIndices out;
  const auto priv_end = perm.begin() + static_cast<std::ptrdiff_t>(spec.private_size);
  const auto pub_end = priv_end + static_cast<std::ptrdiff_t>(spec.public_size);
  out.private_indices.assign(perm.begin(), priv_end);
  out.public_indices.assign(priv_end, pub_end);
  out.remainder.assign(pub_end, perm.end());
  return out;
}

PublicPrivate split_public_private(const Dataset& ds, const SplitSpec& spec) {
  const SplitIndices idx = split_indices(ds.size(), spec);
  return {subset(ds, idx.public_indices), subset(ds, idx.private_indices)};
}

}  // namespace pdpsgd::data
