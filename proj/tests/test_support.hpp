// Copyright 2026 The costate-rl Authors
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

// Finite-difference oracles and random fixtures shared by the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "costate/tensor.hpp"

namespace costate::testing {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Tensor t(s);
  for (double& v : t.data) v = uni(rng);
  return t;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true
/// gradient is ~0 from turning round-off into a large relative error.
inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Two-point central difference, step h.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Five-point central difference, error O(h^4).
inline double central_difference5(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12.0 * h);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares `analytic` against finite differences of `loss` over every entry
/// of `x`; `loss` receives the perturbed vector.
inline GradCheck check_gradient(const std::function<double(const std::vector<double>&)>& loss,
                                std::vector<double> x, const std::vector<double>& analytic, double h,
                                double floor, bool five_point) {
  GradCheck out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    auto f = [&](double v) {
      x[i] = v;
      const double r = loss(x);
      x[i] = x0;
      return r;
    };
    const double fd = five_point ? central_difference5(f, x0, h) : central_difference(f, x0, h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], fd, floor));
    ++out.checked;
  }
  return out;
}

}  // namespace costate::testing
