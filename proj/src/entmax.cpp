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

#include "morphseg/entmax.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "morphseg/errors.hpp"

namespace morphseg::entmax {

namespace {

void CheckFinite(std::span<const double> z, const char* op) {
  if (z.empty()) throw ArgumentError(std::string(op) + ": empty input");
  for (double v : z) {
    if (!std::isfinite(v)) throw ArgumentError(std::string(op) + ": non-finite input");
  }
}

bool IsOnePointFive(double alpha) { return alpha == 1.5; }

}  // namespace

std::vector<double> EntmaxBisect(std::span<const double> z, double alpha, double tol) {
  CheckFinite(z, "entmax_bisect");
  if (!(alpha > 1.0)) throw ArgumentError("entmax_bisect: alpha must be > 1");
  if (!(tol > 0.0)) throw ArgumentError("entmax_bisect: tol must be > 0");

  const double am1 = alpha - 1.0;
  const double exponent = 1.0 / am1;
  const std::size_t n = z.size();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = am1 * z[i];
  const double x_max = *std::max_element(x.begin(), x.end());

  auto mass = [&](double tau) {
    double sum = 0.0;
    for (double v : x) {
      const double d = v - tau;
      if (d > 0.0) sum += std::pow(d, exponent);
    }
    return sum;
  };

  // mass(lo) >= 1 because the largest entry contributes exactly 1; mass(hi) = 0.
  double lo = x_max - 1.0;
  double hi = x_max;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double tau = 0.5 * (lo + hi);

  // Newton polish: d mass / d tau = -exponent * sum d^(exponent - 1).
  double slope = 0.0;
  for (double v : x) {
    const double d = v - tau;
    if (d > 0.0) slope += exponent * std::pow(d, exponent - 1.0);
  }
  if (slope > 0.0) {
    const double polished = tau + (mass(tau) - 1.0) / slope;
    if (polished >= x_max - 1.0 && polished <= x_max) tau = polished;
  }

  std::vector<double> p(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - tau;
    if (d > 0.0) p[i] = std::pow(d, exponent);
    sum += p[i];
  }
  if (!(std::abs(sum - 1.0) <= std::max(tol, 1e-6))) {
    throw ArgumentError("entmax_bisect: failed to converge (mass " + std::to_string(sum) + ")");
  }
  for (double& v : p) v /= sum;
  return p;
}

void Entmax15(std::span<const double> z, std::span<double> out) {
  CheckFinite(z, "entmax15");
  if (out.size() != z.size()) throw ArgumentError("entmax15: output size mismatch");
  const std::size_t n = z.size();
  const double z_max = *std::max_element(z.begin(), z.end());

  // Work on s = (z - max) / 2 sorted descending; the support is a prefix.
  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = 0.5 * (z[i] - z_max);
  std::stable_sort(sorted.begin(), sorted.end(), std::greater<>());

  // tau_k is the threshold if the support were the top k; the support size is
  // the number of k with tau_k <= s_k.
  std::vector<double> taus(n);
  std::size_t support = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double v = sorted[k - 1];
    sum += v;
    sum_sq += v * v;
    const double kk = static_cast<double>(k);
    const double mean = sum / kk;
    const double mean_sq = sum_sq / kk;
    const double delta = (1.0 - kk * (mean_sq - mean * mean)) / kk;
    taus[k - 1] = mean - std::sqrt(std::max(delta, 0.0));
    if (taus[k - 1] <= v) ++support;
  }
  const double tau_star = taus[std::max<std::size_t>(support, 1) - 1];

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = 0.5 * (z[i] - z_max) - tau_star;
    out[i] = d > 0.0 ? d * d : 0.0;
    total += out[i];
  }
  for (double& v : out) v /= total;
}

std::vector<double> Entmax15(std::span<const double> z) {
  std::vector<double> out(z.size());
  Entmax15(z, out);
  return out;
}

std::vector<double> Entmax(std::span<const double> z, double alpha) {
  if (IsOnePointFive(alpha)) return Entmax15(z);
  return EntmaxBisect(z, alpha);
}

std::vector<double> EntmaxJvp(std::span<const double> p, std::span<const double> dz,
                              double alpha) {
  if (p.size() != dz.size()) throw ArgumentError("entmax_jvp: size mismatch");
  if (!(alpha > 1.0)) throw ArgumentError("entmax_jvp: alpha must be > 1");
  double mass = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ArgumentError("entmax_jvp: p has a negative or non-finite entry");
    }
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw ArgumentError("entmax_jvp: p does not sum to 1");

  const std::size_t n = p.size();
  std::vector<double> s(n, 0.0);
  double s_sum = 0.0;
  double s_dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) {
      s[i] = IsOnePointFive(alpha) ? std::sqrt(p[i]) : std::pow(p[i], 2.0 - alpha);
      s_sum += s[i];
      s_dot += s[i] * dz[i];
    }
  }
  std::vector<double> out(n, 0.0);
  const double mean = s_dot / s_sum;
  for (std::size_t i = 0; i < n; ++i) {
    if (s[i] > 0.0) out[i] = s[i] * (dz[i] - mean);
  }
  return out;
}

double TsallisEntropy(std::span<const double> p, double alpha) {
  double sum = 0.0;
  for (double v : p) {
    if (v > 0.0) {
      const double pa = IsOnePointFive(alpha) ? v * std::sqrt(v) : std::pow(v, alpha);
      sum += v - pa;
    }
  }
  return sum / (alpha * (alpha - 1.0));
}

double EntmaxLossInto(std::span<const double> z, std::size_t target, double alpha,
                      std::span<double> prob) {
  if (target >= z.size()) {
    throw ArgumentError("entmax_loss: target " + std::to_string(target) +
                        " out of range for " + std::to_string(z.size()) + " classes");
  }
  if (IsOnePointFive(alpha)) {
    Entmax15(z, prob);
  } else {
    const auto p = EntmaxBisect(z, alpha);
    std::copy(p.begin(), p.end(), prob.begin());
  }
  double inner = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (prob[i] > 0.0) inner += prob[i] * (z[i] - z[target]);
  }
  const double loss = TsallisEntropy(prob, alpha) + inner;
  return std::max(loss, 0.0);
}

LossResult EntmaxLoss(std::span<const double> z, std::size_t target, double alpha) {
  LossResult result;
  result.prob.assign(z.size(), 0.0);
  result.loss = EntmaxLossInto(z, target, alpha, result.prob);
  result.grad = result.prob;
  result.grad[target] -= 1.0;
  return result;
}

std::vector<double> Softmax(std::span<const double> z) {
  CheckFinite(z, "softmax");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace morphseg::entmax
