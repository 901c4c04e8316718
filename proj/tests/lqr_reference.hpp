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


// Finite-horizon LQR closed loop u = -R^-1 B'P(t)x integrated with RK4,
// P at the half steps taken from a Riccati sweep on a grid of dt/2.

#pragma once

#include <vector>

#include "costate/pmp.hpp"

namespace costate::testing {

inline std::vector<Vec> riccati_closed_loop(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P_f,
                                            const Vec& x0, double t_f, double dt) {
  const RiccatiTrajectory fine = riccati_ode(A, B, Q, R, P_f, t_f, dt / 2);
  const Mat Rinv_Bt = R.inverse() * B.transpose();
  auto rhs = [&](const Vec& x, const Mat& P) { return Vec(A * x - B * (Rinv_Bt * P * x)); };
  const std::size_t steps = (fine.P.size() - 1) / 2;
  std::vector<Vec> xs{x0};
  Vec x = x0;
  for (std::size_t k = 0; k < steps; ++k) {
    const Mat& P0 = fine.P[2 * k];
    const Mat& Pm = fine.P[2 * k + 1];
    const Mat& P1 = fine.P[2 * k + 2];
    const Vec k1 = rhs(x, P0);
    const Vec k2 = rhs(x + 0.5 * dt * k1, Pm);
    const Vec k3 = rhs(x + 0.5 * dt * k2, Pm);
    const Vec k4 = rhs(x + dt * k3, P1);
    x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    xs.push_back(x);
  }
  return xs;
}

/// max_k |x_k - ref_k|_inf / max_k |ref_k|_inf
inline double sup_relative_error(const std::vector<Vec>& x, const std::vector<Vec>& ref) {
  double err = 0.0, scale = 0.0;
  const std::size_t n = std::min(x.size(), ref.size());
  for (std::size_t k = 0; k < n; ++k) {
    err = std::max(err, (x[k] - ref[k]).cwiseAbs().maxCoeff());
    scale = std::max(scale, ref[k].cwiseAbs().maxCoeff());
  }
  return err / scale;
}

}  // namespace costate::testing
