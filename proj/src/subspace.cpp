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

#include "pdpsgd/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pdpsgd/error.hpp"

namespace pdpsgd::subspace {

namespace {

struct EigenPairs {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // p x values.size(), may be empty
};

// Modified Gram-Schmidt, applied twice.
void reorthonormalize(DenseMatrix& q) {
  // Cholesky QR, twice. Same triangular transform as Gram-Schmidt but in
  // blocked products; falls back to the column loop if the Gram is singular.
  bool ok = true;
  for (int pass = 0; pass < 2 && ok; ++pass) {
    DenseMatrix s = DenseMatrix::Zero(q.cols(), q.cols());
    s.selfadjointView<Eigen::Lower>().rankUpdate(q.transpose());
    const Eigen::LLT<DenseMatrix> llt(s);
    ok = llt.info() == Eigen::Success && llt.matrixLLT().diagonal().minCoeff() > 1e-8;
    if (ok) llt.matrixU().solveInPlace<Eigen::OnTheRight>(q);
  }
  if (ok) return;
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      for (Eigen::Index i = 0; i < j; ++i) q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
      q.col(j).normalize();
    }
  }
}

EigenPairs gram_route(const DenseMatrix& g, Eigen::Index count, bool want_vectors,
                      double rank_tol) {
  const double m = static_cast<double>(g.cols());
  DenseMatrix gram = DenseMatrix::Zero(g.cols(), g.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(g.transpose(), 1.0 / m);
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(
      gram, want_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("gram eigensolve failed");
  const Eigen::Index n = gram.rows();
  const double top = std::max(es.eigenvalues()[n - 1], 0.0);
  EigenPairs out;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < count && i < n; ++i) {
    const Eigen::Index src = n - 1 - i;
    const double lambda = std::max(es.eigenvalues()[src], 0.0);
    out.values.push_back(lambda);
    if (lambda > rank_tol * top && lambda > 0.0) kept.push_back(src);
  }
  if (want_vectors) {
    DenseMatrix coeffs(gram.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t c = 0; c < kept.size(); ++c)
      coeffs.col(static_cast<Eigen::Index>(c)) = es.eigenvectors().col(kept[c]);
    out.vectors.noalias() = g * coeffs;
    out.vectors.colwise().normalize();
  }
  return out;
}

// Lanczos with full reorthogonalization on the implicit second-moment
// operator. Grows the Krylov space until the top `count` Ritz pairs
// have residual below tol * theta_1.
EigenPairs lanczos_route(const DenseMatrix& g, Eigen::Index count, double rank_tol,
                         double tol, std::uint64_t seed) {
  const SecondMomentOperator op(g);
  const Eigen::Index p = g.rows();
  const RngStream rng(seed, "lanczos/start");
  std::uint64_t draw = 0;

  DenseMatrix basis(p, std::min<Eigen::Index>(p, 2 * count + 20));
  std::vector<double> alpha, beta;
  auto fresh_start = [&](Eigen::Index j) {
    Vector q = gaussian_vector(rng, static_cast<std::size_t>(p), 1.0, draw);
    draw += static_cast<std::uint64_t>(p);
    for (int pass = 0; pass < 2; ++pass)
      if (j > 0) q -= basis.leftCols(j) * (basis.leftCols(j).transpose() * q);
    return Vector(q / q.norm());
  };

  basis.col(0) = fresh_start(0);
  Eigen::SelfAdjointEigenSolver<DenseMatrix> tri;
  for (Eigen::Index j = 0; j < p; ++j) {
    Vector w = op.apply(basis.col(j));
    const double a = basis.col(j).dot(w);
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass)
      w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
    double b = w.norm();

    const Eigen::Index dim = j + 1;
    bool done = dim == p;
    if (dim >= count) {
      DenseMatrix t = DenseMatrix::Zero(dim, dim);
      for (Eigen::Index i = 0; i < dim; ++i) {
        t(i, i) = alpha[static_cast<std::size_t>(i)];
        if (i + 1 < dim) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
      }
      tri.compute(t);
      const double theta1 = std::abs(tri.eigenvalues()[dim - 1]);
      bool converged = true;
      for (Eigen::Index i = 0; i < count; ++i) {
        const double resid = b * std::abs(tri.eigenvectors()(dim - 1, dim - 1 - i));
        if (resid > tol * std::max(theta1, 1e-300)) converged = false;
      }
      done = done || converged;
    }
    if (done) {
      EigenPairs out;
      const double top = std::max(tri.eigenvalues()[dim - 1], 0.0);
      std::vector<Eigen::Index> kept;
      for (Eigen::Index i = 0; i < count && i < dim; ++i) {
        const double lambda = std::max(tri.eigenvalues()[dim - 1 - i], 0.0);
        out.values.push_back(lambda);
        if (lambda > rank_tol * top && lambda > 0.0) kept.push_back(dim - 1 - i);
      }
      out.vectors.resize(p, static_cast<Eigen::Index>(kept.size()));
      for (std::size_t c = 0; c < kept.size(); ++c)
        out.vectors.col(static_cast<Eigen::Index>(c)) =
            basis.leftCols(dim) * tri.eigenvectors().col(kept[c]);
      return out;
    }
    if (basis.cols() < dim + 1)
      basis.conservativeResize(Eigen::NoChange, std::min<Eigen::Index>(p, 2 * basis.cols()));
    if (b <= 1e-13 * std::max(std::abs(a), 1e-300)) {
      // Invariant subspace reached: continue from a new orthogonal direction.
      b = 0.0;
      basis.col(dim) = fresh_start(dim);
    } else {
      basis.col(dim) = w / b;
    }
    beta.push_back(b);
  }
  throw NumericError("lanczos: exhausted dimension without result");
}

EigenPairs top_pairs(const DenseMatrix& g, Eigen::Index count, bool want_vectors,
                     const EigenspaceOptions& opts) {
  if (g.cols() <= opts.lanczos_threshold)
    return gram_route(g, count, want_vectors, opts.rank_tol);
  return lanczos_route(g, count, opts.rank_tol, opts.lanczos_tol, opts.seed);
}

}  // namespace

const char* source_name(Source s) {
  switch (s) {
    case Source::kPublicEigen: return "public_eigen";
    case Source::kRandom: return "random";
    case Source::kOracle: return "oracle";
  }
  return "unknown";
}

DenseMatrix second_moment(const models::GradientBatch& gb, Eigen::Index max_explicit_dim) {
  if (gb.count() == 0) throw InvalidArgument("second_moment: empty batch");
  if (gb.dim() > max_explicit_dim)
    throw CapacityError("second_moment: p = " + std::to_string(gb.dim()) +
                        " exceeds explicit limit " + std::to_string(max_explicit_dim));
  DenseMatrix m = DenseMatrix::Zero(gb.dim(), gb.dim());
  m.selfadjointView<Eigen::Lower>().rankUpdate(gb.grads, 1.0 / static_cast<double>(gb.count()));
  m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
  return m;
}

SecondMomentOperator::SecondMomentOperator(const DenseMatrix& factor) : factor_(factor) {
  if (factor_.cols() == 0) throw InvalidArgument("second moment operator: empty factor");
}

Vector SecondMomentOperator::apply(const Vector& x) const {
  if (x.size() != factor_.rows()) throw DimensionMismatch("second moment operator: bad length");
  const Vector coeffs = factor_.transpose() * x;
  return factor_ * coeffs / static_cast<double>(factor_.cols());
}

double SecondMomentOperator::trace() const {
  return factor_.squaredNorm() / static_cast<double>(factor_.cols());
}

Subspace top_k_eigenspace(const models::GradientBatch& gb, Eigen::Index k,
                          const EigenspaceOptions& opts) {
  if (gb.count() == 0) throw InvalidArgument("top_k_eigenspace: empty batch");
  if (k < 1 || k > std::min(gb.dim(), gb.count()))
    throw InvalidArgument("top_k_eigenspace: need 1 <= k <= min(p, m)");
  const Eigen::Index count = std::min(k + 1, std::min(gb.dim(), gb.count()));
  EigenPairs pairs = top_pairs(gb.grads, count, true, opts);

  Subspace sub;
  sub.source = Source::kPublicEigen;
  sub.requested_k = static_cast<std::size_t>(k);
  const Eigen::Index achieved = std::min(k, pairs.vectors.cols());
  sub.basis = pairs.vectors.leftCols(achieved);
  sub.rank_deficient = achieved < k;
  reorthonormalize(sub.basis);
  normalize_signs(sub.basis);
  sub.eigenvalues.assign(pairs.values.begin(), pairs.values.begin() + k);
  sub.next_eigenvalue = count > k ? pairs.values[static_cast<std::size_t>(k)] : 0.0;
  return sub;
}

SpectrumSummary spectrum_summary(const models::GradientBatch& gb, Eigen::Index top,
                                 Eigen::Index k, const EigenspaceOptions& opts) {
  if (gb.count() == 0) throw InvalidArgument("spectrum_summary: empty batch");
  const Eigen::Index cap = std::min(gb.dim(), gb.count());
  if (k < 1 || k > cap) throw InvalidArgument("spectrum_summary: k out of range");
  const Eigen::Index count = std::min(std::max(top, k + 1), cap);
  EigenPairs pairs = top_pairs(gb.grads, count, false, opts);
  SpectrumSummary s;
  s.top_eigenvalues.assign(pairs.values.begin(),
                           pairs.values.begin() + std::min<Eigen::Index>(top, count));
  const GapInfo gap = eigen_gap(pairs.values, static_cast<std::size_t>(k));
  s.eigen_gap_at_k = gap.gap;
  s.gap_degenerate = gap.degenerate;
  s.trace = gb.grads.squaredNorm() / static_cast<double>(gb.count());
  return s;
}

Subspace random_projection(Eigen::Index p, Eigen::Index k, std::uint64_t seed) {
  if (k < 1 || k > p) throw InvalidArgument("random_projection: need 1 <= k <= p");
  const DenseMatrix raw = gaussian_matrix(RngStream(seed, "random_projection"),
                                          static_cast<std::size_t>(p),
                                          static_cast<std::size_t>(k));
  return from_basis(raw, Source::kRandom);
}

Subspace from_basis(const DenseMatrix& columns, Source source) {
  if (columns.cols() < 1 || columns.cols() > columns.rows())
    throw InvalidArgument("from_basis: need 1 <= k <= p columns");
  Eigen::HouseholderQR<DenseMatrix> qr(columns);
  Subspace sub;
  sub.basis = qr.householderQ() * DenseMatrix::Identity(columns.rows(), columns.cols());
  sub.source = source;
  sub.requested_k = static_cast<std::size_t>(columns.cols());
  return sub;
}

Vector project(const Subspace& sub, const Vector& x) {
  if (x.size() != sub.dim())
    throw DimensionMismatch("project: vector length " + std::to_string(x.size()) +
                            " != subspace dimension " + std::to_string(sub.dim()));
  const Vector coeffs = sub.basis.transpose() * x;
  return sub.basis * coeffs;
}

double subspace_distance(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionMismatch("subspace_distance: different ambient p");
  if (a.cols() != b.cols()) throw DimensionMismatch("subspace_distance: unequal ranks");
  if (a.cols() == 0) return 0.0;
  const DenseMatrix residual = b - a * (a.transpose() * b);
  const DenseMatrix small = residual.transpose() * residual;
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(small, Eigen::EigenvaluesOnly);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  return std::min(1.0, std::sqrt(top));
}

double subspace_distance(const Subspace& a, const Subspace& b) {
  return subspace_distance(a.basis, b.basis);
}

GapInfo eigen_gap(const std::vector<double>& eigenvalues, std::size_t k) {
  if (k < 1 || k > eigenvalues.size())
    throw InvalidArgument("eigen_gap: k out of range");
  const double lk = eigenvalues[k - 1];
  const double next = k < eigenvalues.size() ? eigenvalues[k] : 0.0;
  GapInfo info;
  info.gap = std::max(0.0, lk - next);
  const double scale = std::max(std::abs(eigenvalues.front()), 1e-300);
  info.degenerate = info.gap <= 1e-12 * scale;
  return info;
}

GapInfo eigen_gap(const SpectrumSummary& spectrum, std::size_t k) {
  return eigen_gap(spectrum.top_eigenvalues, k);
}

void normalize_signs(DenseMatrix& basis) {
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    Eigen::Index idx;
    basis.col(j).cwiseAbs().maxCoeff(&idx);
    if (basis(idx, j) < 0) basis.col(j) *= -1.0;
  }
}

}  // namespace pdpsgd::subspace
