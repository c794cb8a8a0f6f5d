// Copyright 2026 The morphseg Authors. All Rights Reserved.
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

#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "morphseg/entmax.hpp"
#include "morphseg/errors.hpp"
#include "morphseg/random.hpp"

using namespace morphseg;
using oracle::MaxAbsDiff;
using oracle::RandomVector;
using oracle::SupportSize;
using namespace morphseg::entmax;

namespace {

// Closed form for two inputs at alpha 1.5 with d = (z0 - z1) / 2.
std::vector<double> TwoDimOracle(double z0, double z1) {
  const double d = (z0 - z1) / 2.0;
  if (d >= 1.0) return {1.0, 0.0};
  if (d <= -1.0) return {0.0, 1.0};
  const double u = (d + std::sqrt(2.0 - d * d)) / 2.0;
  return {u * u, (u - d) * (u - d)};
}

}  // namespace

TEST_CASE("mapping examples") {
  CHECK(MaxAbsDiff(Entmax15(std::vector<double>{0, 0}), {0.5, 0.5}) < 1e-15);
  CHECK(MaxAbsDiff(Entmax15(std::vector<double>{10, 0}), {1, 0}) == 0.0);
  CHECK(MaxAbsDiff(EntmaxBisect(std::vector<double>{10, 0}), {1, 0}) < 1e-12);
  const auto uniform = EntmaxBisect(std::vector<double>(7, 3.25));
  for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 7).epsilon(1e-12));
  const auto near_softmax = EntmaxBisect(std::vector<double>{1, 0}, 1.001);
  CHECK(std::abs(near_softmax[0] - 0.7311) < 1e-3);
  CHECK(std::abs(near_softmax[1] - 0.2689) < 1e-3);
  CHECK(MaxAbsDiff(Entmax(std::vector<double>{0, 0}, 2.0), {0.5, 0.5}) < 1e-12);
}

TEST_CASE("two-dimensional closed form") {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const double a = rng.Uniform(-4, 4), b = rng.Uniform(-4, 4);
    const std::vector<double> z = {a, b};
    CHECK(MaxAbsDiff(Entmax15(z), TwoDimOracle(a, b)) < 1e-12);
    CHECK(MaxAbsDiff(EntmaxBisect(z), TwoDimOracle(a, b)) < 1e-10);
  }
}

TEST_CASE("exact agrees with bisection") {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto z = RandomVector(rng, 16, std::pow(10.0, rng.Uniform(-2, 2)));
    worst = std::max(worst, MaxAbsDiff(Entmax15(z), EntmaxBisect(z, 1.5, 1e-10)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("mapping properties") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.Below(63);
    const auto z = RandomVector(rng, n, std::pow(10.0, rng.Uniform(-2, 2)));
    const auto p = Entmax15(z);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-9);
    for (double v : p) CHECK(v >= 0.0);

    auto shifted = z;
    const double c = rng.Uniform(-10, 10);
    for (auto& v : shifted) v += c;
    CHECK(MaxAbsDiff(Entmax15(shifted), p) < 1e-9);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.Shuffle(std::span(perm));
    std::vector<double> zp(n);
    for (std::size_t i = 0; i < n; ++i) zp[i] = z[perm[i]];
    const auto pp = Entmax15(zp);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(pp[i] - p[perm[i]]) < 1e-12);

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (z[i] > z[j]) CHECK(p[i] >= p[j]);
      }
    }

    auto scaled = z;
    const double t = 1.0 + rng.Uniform() * 3;
    for (auto& v : scaled) v *= t;
    CHECK(SupportSize(Entmax15(scaled)) <= SupportSize(p));
  }
}

TEST_CASE("ties receive equal mass") {
  const auto p = Entmax15(std::vector<double>{1.0, 0.3, 1.0, 0.3, -2.0});
  CHECK(p[0] == p[2]);
  CHECK(p[1] == p[3]);
  CHECK(p[4] == 0.0);
}

TEST_CASE("jacobian vector product") {
  // s = [sqrt(1/2), sqrt(1/2)] gives J e0 = [s0 - s0^2 / (2 s0), -s0 / 2] = +-sqrt(2) / 4,
  // the slope of the two-dimensional closed form at d = 0.
  const std::vector<double> half = {0.5, 0.5};
  const auto j = EntmaxJvp(half, std::vector<double>{1, 0});
  CHECK(j[0] == doctest::Approx(std::sqrt(2.0) / 4).epsilon(1e-12));
  CHECK(j[1] == doctest::Approx(-std::sqrt(2.0) / 4).epsilon(1e-12));
  const double h = 1e-6;
  const double slope = (TwoDimOracle(h, 0)[0] - TwoDimOracle(-h, 0)[0]) / (2 * h);
  CHECK(j[0] == doctest::Approx(slope).epsilon(1e-8));

  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.Below(10);
    const auto z = RandomVector(rng, n, 2.0);
    const auto p = Entmax15(z);
    const auto ones = EntmaxJvp(p, std::vector<double>(n, 1.0));
    for (double v : ones) CHECK(std::abs(v) < 1e-12);

    const auto dz = RandomVector(rng, n, 1.0);
    const auto analytic = EntmaxJvp(p, dz);
    const double h = 1e-6;
    auto zp = z, zm = z;
    for (std::size_t i = 0; i < n; ++i) {
      zp[i] += h * dz[i];
      zm[i] -= h * dz[i];
    }
    const auto pp = Entmax15(zp), pm = Entmax15(zm);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(analytic[i] - (pp[i] - pm[i]) / (2 * h)) < 1e-6);
    }

    // Off-support directions do not move the output.
    std::vector<double> off(n, 0.0);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (p[i] == 0.0) {
        off[i] = 1.0;
        any = true;
      }
    }
    if (any) {
      for (double v : EntmaxJvp(p, off)) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("loss examples") {
  const auto saturated = EntmaxLoss(std::vector<double>{10, 0}, 0);
  CHECK(saturated.loss == 0.0);
  CHECK(saturated.grad == std::vector<double>{0.0, 0.0});

  const auto flat = EntmaxLoss(std::vector<double>{0, 0}, 0);
  CHECK(flat.loss == doctest::Approx(4.0 / 3.0 * (1.0 - 1.0 / std::sqrt(2.0))).epsilon(1e-12));
  CHECK(flat.loss == doctest::Approx(0.39052).epsilon(1e-5));
  CHECK(flat.grad[0] == doctest::Approx(-0.5));
  CHECK(flat.grad[1] == doctest::Approx(0.5));
  CHECK(TsallisEntropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(flat.loss));
}

TEST_CASE("loss gradient identity and finite differences") {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.Below(15);
    const auto z = RandomVector(rng, n, 3.0);
    const std::size_t y = rng.Below(n);
    const auto r = EntmaxLoss(z, y);
    CHECK(r.loss >= 0.0);
    const auto p = Entmax15(z);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(r.grad[i] - (p[i] - (i == y ? 1.0 : 0.0))) < 1e-12);
    }
    std::vector<double> prob(n);
    CHECK(EntmaxLossInto(z, y, 1.5, prob) == r.loss);
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; ++i) {
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double fd = (EntmaxLoss(zp, y).loss - EntmaxLoss(zm, y).loss) / (2 * h);
      CHECK(std::abs(fd - r.grad[i]) / std::max({std::abs(fd), std::abs(r.grad[i]), 1e-3}) < 1e-6);
    }
  }
}

TEST_CASE("general alpha loss") {
  const auto r = EntmaxLoss(std::vector<double>{0.2, -0.1, 0.4}, 1, 1.3);
  const auto p = EntmaxBisect(std::vector<double>{0.2, -0.1, 0.4}, 1.3);
  CHECK(MaxAbsDiff(r.prob, p) < 1e-10);
  CHECK(r.loss > 0.0);
}

TEST_CASE("argument errors") {
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Entmax15(std::vector<double>{0, inf}), ArgumentError);
  CHECK_THROWS_AS(EntmaxBisect(std::vector<double>{nan, 0}), ArgumentError);
  CHECK_THROWS_AS(EntmaxBisect(std::vector<double>{0, 0}, 1.0), ArgumentError);
  CHECK_THROWS_AS(EntmaxBisect(std::vector<double>{0, 0}, 1.5, 0.0), ArgumentError);
  CHECK_THROWS_AS(EntmaxLoss(std::vector<double>{0, 0}, 2), ArgumentError);
  CHECK_THROWS_AS(EntmaxJvp(std::vector<double>{0.7, 0.7}, std::vector<double>{1, 0}),
                  ArgumentError);
  CHECK_THROWS_AS(EntmaxJvp(std::vector<double>{0.5, 0.5}, std::vector<double>{1}),
                  ArgumentError);
}
