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

#include "pdpsgd/core_math.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "pdpsgd/error.hpp"

namespace pdpsgd {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

// Philox4x32-10 on a 128-bit counter.
std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                    std::uint32_t k0, std::uint32_t k1) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// 53-bit mantissa mapped strictly inside (0, 1).
inline double to_open_unit(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

std::array<std::uint64_t, 2> block(const std::uint32_t key[2],
                                   std::uint64_t block_index) {
  const auto out = philox({static_cast<std::uint32_t>(block_index),
                           static_cast<std::uint32_t>(block_index >> 32), 0u,
                           0u},
                          key[0], key[1]);
  return {(static_cast<std::uint64_t>(out[0]) << 32) | out[1],
          (static_cast<std::uint64_t>(out[2]) << 32) | out[3]};
}

bool is_symmetric(const DenseMatrix& a) {
  if (a.rows() != a.cols()) return false;
  const double scale = a.cwiseAbs().maxCoeff();
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * scale;
}

// Shared power-iteration driver. `step` maps a unit vector to the next
// (unnormalized) iterate and reports the current norm estimate.
double power_iterate(const std::function<double(Vector&)>& step,
                     Eigen::Index dim, const SpectralNormOptions& opts) {
  if (!(opts.tol > 0)) throw InvalidArgument("spectral_norm: tol must be > 0");
  RngStream rng(opts.seed, "spectral_norm/start");
  Vector x = gaussian_vector(rng, static_cast<std::size_t>(dim), 1.0);
  x.normalize();

  double estimate = 0.0;
  double prev_delta = -1.0;
  for (int it = 0; it < opts.max_iter; ++it) {
    const double next = step(x);
    if (next == 0.0) return 0.0;
    const double delta = std::abs(next - estimate);
    estimate = next;
    if (it > 0) {
      if (delta <= 1e-16 * estimate) return estimate;
      // Geometric tail bound from the observed contraction ratio.
      if (prev_delta > 0 && delta < prev_delta) {
        const double r = delta / prev_delta;
        const double remaining = delta * r / (1.0 - r);
        if (remaining <= opts.tol * estimate && delta <= opts.tol * estimate)
          return estimate;
      }
    }
    prev_delta = delta;
  }
  throw NonConvergence("spectral_norm: no convergence within max_iter",
                       estimate);
}

}  // namespace

bool all_finite(const DenseMatrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

RngStream::RngStream(std::uint64_t seed, std::string stream_id)
    : seed_(seed), stream_id_(std::move(stream_id)) {
  const std::uint64_t k = splitmix64(seed_ ^ splitmix64(fnv1a(stream_id_)));
  key_[0] = static_cast<std::uint32_t>(k);
  key_[1] = static_cast<std::uint32_t>(k >> 32);
}

std::uint64_t RngStream::bits(std::uint64_t index) const {
  return block(key_, index >> 1)[index & 1];
}

double RngStream::uniform(std::uint64_t index) const {
  return to_open_unit(bits(index));
}

double RngStream::normal(std::uint64_t index) const {
  // Box-Muller on the pair of uniforms of one Philox block.
  const auto b = block(key_, index >> 1);
  const double u1 = to_open_unit(b[0]);
  const double u2 = to_open_unit(b[1]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? radius * std::sin(angle) : radius * std::cos(angle);
}

RngStream RngStream::child(std::string_view suffix) const {
  return RngStream(seed_, stream_id_ + "/" + std::string(suffix));
}

Vector gaussian_vector(const RngStream& rng, std::size_t dim, double std,
                       std::uint64_t offset) {
  if (!std::isfinite(std)) throw InvalidArgument("gaussian_vector: non-finite std");
  if (std < 0) throw InvalidArgument("gaussian_vector: std must be >= 0");
  Vector out(static_cast<Eigen::Index>(dim));
  if (std == 0.0) {
    out.setZero();
    return out;
  }
  for (std::size_t i = 0; i < dim; ++i)
    out[static_cast<Eigen::Index>(i)] = std * rng.normal(offset + i);
  return out;
}

DenseMatrix gaussian_matrix(const RngStream& rng, std::size_t rows,
                            std::size_t cols, std::uint64_t offset) {
  DenseMatrix out(static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
  double* data = out.data();
  for (std::size_t i = 0; i < rows * cols; ++i) data[i] = rng.normal(offset + i);
  return out;
}

double spectral_norm(const DenseMatrix& a, const SpectralNormOptions& opts) {
  if (!a.allFinite()) throw InvalidArgument("spectral_norm: non-finite entries");
  if (a.size() == 0) return 0.0;
  if (is_symmetric(a)) {
    return spectral_norm_symmetric([&a](const Vector& x) -> Vector { return a * x; },
                                   a.rows(), opts);
  }
  Vector ax(a.rows());
  return power_iterate(
      [&](Vector& x) {
        ax.noalias() = a * x;
        const double est = ax.norm();
        if (est == 0.0) return 0.0;
        x.noalias() = a.transpose() * ax;
        x.normalize();
        return est;
      },
      a.cols(), opts);
}

double spectral_norm_symmetric(
    const std::function<Vector(const Vector&)>& apply, Eigen::Index dim,
    const SpectralNormOptions& opts) {
  if (dim == 0) return 0.0;
  return power_iterate(
      [&](Vector& x) {
        Vector y = apply(x);
        const double est = y.norm();
        if (est == 0.0) return 0.0;
        x = y / est;
        return est;
      },
      dim, opts);
}

double symmetric_spectral_norm_dense(const DenseMatrix& a) {
  if (a.rows() != a.cols())
    throw DimensionMismatch("symmetric_spectral_norm_dense: matrix not square");
  if (a.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Vector finite_diff_grad(const ScalarFunction& f, const Vector& w, double h) {
  if (!(h > 0)) throw InvalidArgument("finite_diff_grad: h must be > 0");
  Vector g(w.size());
  Vector probe = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    probe[i] = w[i] + h;
    const double up = f(probe);
    probe[i] = w[i] - h;
    const double down = f(probe);
    probe[i] = w[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: non-finite function value at coordinate " +
                         std::to_string(i));
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double orthonormality_error(const DenseMatrix& q) {
  if (q.cols() == 0) return 0.0;
  const DenseMatrix gram = q.transpose() * q;
  return (gram - DenseMatrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace pdpsgd
