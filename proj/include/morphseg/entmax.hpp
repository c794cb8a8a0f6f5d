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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Sparse probability mappings. Everything here is computed in double
// precision regardless of the caller's storage type.
namespace morphseg::entmax {

inline constexpr double kDefaultAlpha = 1.5;

// General alpha-entmax by bisection on the threshold tau:
//   p_i = [(alpha - 1) z_i - tau]_+^(1 / (alpha - 1)).
// Runs a fixed 60 halvings of the bracket, one Newton step, then rescales so
// the output sums to one. `tol` bounds the pre-rescale mass error that is
// accepted; anything worse throws. Requires alpha > 1 and finite z.
std::vector<double> EntmaxBisect(std::span<const double> z, double alpha = kDefaultAlpha,
                                 double tol = 1e-10);

// Exact sort-based 1.5-entmax.
std::vector<double> Entmax15(std::span<const double> z);
void Entmax15(std::span<const double> z, std::span<double> out);

// Dispatches to Entmax15 for alpha == 1.5 and to EntmaxBisect otherwise.
std::vector<double> Entmax(std::span<const double> z, double alpha = kDefaultAlpha);

// J * dz for the Jacobian of alpha-entmax evaluated at output p.
// On the support, J = diag(s) - s s^T / sum(s) with s_i = p_i^(2 - alpha).
std::vector<double> EntmaxJvp(std::span<const double> p, std::span<const double> dz,
                              double alpha = kDefaultAlpha);

// Tsallis alpha-entropy: sum_j (p_j - p_j^alpha) / (alpha (alpha - 1)).
double TsallisEntropy(std::span<const double> p, double alpha = kDefaultAlpha);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // entmax(z) - onehot(y)
  std::vector<double> prob;  // entmax(z)
};

// Fenchel-Young entmax loss: H(p*) + <p*, z> - z_y, clamped at zero.
LossResult EntmaxLoss(std::span<const double> z, std::size_t target,
                      double alpha = kDefaultAlpha);

// Allocation-free variant for hot loops; `prob` receives entmax(z) and the
// gradient is prob - onehot(target). Returns the loss.
double EntmaxLossInto(std::span<const double> z, std::size_t target, double alpha,
                      std::span<double> prob);

std::vector<double> Softmax(std::span<const double> z);

}  // namespace morphseg::entmax
