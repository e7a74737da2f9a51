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

#include <doctest.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "pdpsgd/data.hpp"
#include "pdpsgd/error.hpp"

using namespace pdpsgd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pdpsgd_data_tests";
  fs::create_directories(dir);
  return dir / name;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Two 1x2 images: (0, 255) and (255, 0), labels 3 and 7.
void write_fixture(const fs::path& images, const fs::path& labels, std::uint32_t image_magic = 0x803,
                   std::size_t label_count = 2, bool truncate = false) {
  std::vector<unsigned char> img;
  put_u32(img, image_magic);
  put_u32(img, 2);
  put_u32(img, 1);
  put_u32(img, 2);
  img.insert(img.end(), {0, 255, 255});
  if (!truncate) img.push_back(0);
  write_bytes(images, img);
  std::vector<unsigned char> lab;
  put_u32(lab, 0x801);
  put_u32(lab, static_cast<std::uint32_t>(label_count));
  for (std::size_t i = 0; i < label_count; ++i) lab.push_back(i % 2 ? 7 : 3);
  write_bytes(labels, lab);
}

}  // namespace

TEST_CASE("load_idx reads a hand-built fixture exactly") {
  const auto img = scratch("fx-images"), lab = scratch("fx-labels");
  write_fixture(img, lab);
  const data::Dataset ds = data::load_idx(img, lab);
  REQUIRE(ds.size() == 2);
  CHECK(ds.feature_dim() == 2);
  CHECK(ds.features(0, 0) == 0.0);
  CHECK(ds.features(0, 1) == 1.0);
  CHECK(ds.features(1, 0) == 1.0);
  CHECK(ds.features(1, 1) == 0.0);
  CHECK(ds.labels == std::vector<int>{3, 7});
  CHECK(ds.class_count == 8);
}

TEST_CASE("load_idx raises a distinct error per format fault") {
  const auto img = scratch("bad-images"), lab = scratch("bad-labels");
  write_fixture(img, lab, 0x802);
  CHECK_THROWS_AS(data::load_idx(img, lab), IdxMagicError);
  write_fixture(img, lab, 0x803, 2, true);
  CHECK_THROWS_AS(data::load_idx(img, lab), IdxTruncatedError);
  write_fixture(img, lab, 0x803, 3);
  CHECK_THROWS_AS(data::load_idx(img, lab), IdxCountMismatchError);
  CHECK_THROWS_AS(data::load_idx(scratch("missing"), lab), Error);
}

TEST_CASE("write_idx then load_idx is byte exact") {
  const auto img = scratch("fx-images"), lab = scratch("fx-labels");
  write_fixture(img, lab);
  const data::Dataset ds = data::load_idx(img, lab);
  const auto img2 = scratch("rt-images"), lab2 = scratch("rt-labels");
  data::write_idx(ds, 1, 2, img2, lab2);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(img) == slurp(img2));
  CHECK(slurp(lab) == slurp(lab2));

  // Larger random payload.
  data::Dataset big;
  big.class_count = 10;
  big.features.resize(20, 12);
  const RngStream rng(5, "test/idx");
  for (Eigen::Index i = 0; i < 20; ++i) {
    for (Eigen::Index j = 0; j < 12; ++j)
      big.features(i, j) = static_cast<double>(rng.bits(static_cast<std::uint64_t>(i * 12 + j)) % 256) / 255.0;
    big.labels.push_back(static_cast<int>(i % 10));
  }
  data::write_idx(big, 3, 4, img2, lab2);
  const data::Dataset back = data::load_idx(img2, lab2);
  CHECK(back.features == big.features);
  CHECK(back.labels == big.labels);
}

TEST_CASE("synthetic_lowrank concentrates energy in the planted rank") {
  const data::SyntheticProblem pr = data::synthetic_lowrank({500, 2000, 5, 0.0, 2, 11});
  const DenseMatrix& x = pr.dataset.features;
  const DenseMatrix cov = x.transpose() * x / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(cov);
  const Vector ev = es.eigenvalues().reverse();
  CHECK(ev.head(5).sum() / ev.sum() >= 0.999);
  // Frame is orthonormal and every row lies in its span.
  CHECK(orthonormality_error(pr.frame) < 1e-12);
  const DenseMatrix resid = x - x * pr.frame * pr.frame.transpose();
  CHECK(resid.squaredNorm() / x.squaredNorm() < 1e-10);
  CHECK(data::planted_accuracy(pr) == 1.0);
}

TEST_CASE("synthetic_lowrank with full rank has positive spectrum") {
  const data::SyntheticProblem pr = data::synthetic_lowrank({20, 2000, 20, 0.0, 2, 1});
  const DenseMatrix cov = pr.dataset.features.transpose() * pr.dataset.features / 2000.0;
  const auto e = oracle::jacobi_eigen(cov);
  CHECK(e.values(19) > 0.1);
}

TEST_CASE("synthetic_lowrank label noise and multiclass") {
  const data::SyntheticProblem noisy = data::synthetic_lowrank({30, 4000, 3, 0.2, 2, 2});
  const double acc = data::planted_accuracy(noisy);
  CHECK(acc > 0.76);
  CHECK(acc < 0.84);
  const data::SyntheticProblem multi = data::synthetic_lowrank({30, 500, 4, 0.0, 5, 2});
  CHECK(multi.dataset.class_count == 5);
  CHECK(data::planted_accuracy(multi) == 1.0);
  std::set<int> seen(multi.dataset.labels.begin(), multi.dataset.labels.end());
  CHECK(seen.size() > 1);
  multi.dataset.validate();
}

TEST_CASE("synthetic_lowrank rejects rank above feature dimension") {
  CHECK_THROWS_AS(data::synthetic_lowrank({5, 10, 6, 0.0, 2, 0}), InvalidArgument);
  CHECK_THROWS_AS(data::synthetic_lowrank({5, 0, 2, 0.0, 2, 0}), InvalidArgument);
}

TEST_CASE("synthetic_resample shares the planted structure") {
  const data::SyntheticSpec spec{40, 300, 4, 0.0, 2, 9};
  const data::SyntheticProblem pr = data::synthetic_lowrank(spec);
  const data::Dataset fresh = data::synthetic_resample(spec, 200, 123);
  CHECK(fresh.size() == 200);
  const DenseMatrix resid = fresh.features - fresh.features * pr.frame * pr.frame.transpose();
  CHECK(resid.norm() < 1e-10 * fresh.features.norm());
  CHECK(fresh.features != pr.dataset.features.topRows(200));
}

TEST_CASE("split_public_private sizes, disjointness and determinism") {
  const auto idx = data::split_indices(60000, {10000, 100, 4});
  CHECK(idx.private_indices.size() == 10000);
  CHECK(idx.public_indices.size() == 100);
  CHECK(idx.remainder.size() == 49900);
  std::set<std::size_t> priv(idx.private_indices.begin(), idx.private_indices.end());
  for (std::size_t i : idx.public_indices) CHECK(!priv.count(i));
  const auto again = data::split_indices(60000, {10000, 100, 4});
  CHECK(again.public_indices == idx.public_indices);
  CHECK(again.private_indices == idx.private_indices);
  const auto other = data::split_indices(60000, {10000, 100, 5});
  CHECK(other.public_indices != idx.public_indices);
}

TEST_CASE("split is disjoint and covering for every small configuration") {
  for (std::size_t n = 1; n <= 7; ++n)
    for (std::size_t a = 0; a <= n; ++a)
      for (std::size_t b = 0; a + b <= n; ++b)
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
          const auto idx = data::split_indices(n, {a, b, seed});
          std::vector<std::size_t> all = idx.private_indices;
          all.insert(all.end(), idx.public_indices.begin(), idx.public_indices.end());
          all.insert(all.end(), idx.remainder.begin(), idx.remainder.end());
          std::sort(all.begin(), all.end());
          std::vector<std::size_t> expect(n);
          std::iota(expect.begin(), expect.end(), std::size_t{0});
          REQUIRE(all == expect);
        }
}

TEST_CASE("split rejects infeasible sizes") {
  CHECK_THROWS_AS(data::split_indices(10000, {10000, 100, 0}), InvalidArgument);
  const data::Dataset ds = oracle::random_dataset(10, 3, 2, 0);
  CHECK_THROWS_AS(data::split_public_private(ds, {8, 3, 0}), InvalidArgument);
  const auto parts = data::split_public_private(ds, {6, 3, 0});
  CHECK(parts.private_set.size() == 6);
  CHECK(parts.public_set.size() == 3);
  CHECK(parts.public_set.class_count == 2);
}

TEST_CASE("Dataset::validate enforces invariants") {
  data::Dataset ds = oracle::random_dataset(4, 2, 3, 0);
  ds.validate();
  ds.labels[0] = 3;
  CHECK_THROWS_AS(ds.validate(), InvalidArgument);
  ds.labels[0] = 0;
  ds.features(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(ds.validate(), InvalidArgument);
  data::Dataset empty;
  CHECK_THROWS_AS(empty.validate(), InvalidArgument);
}
