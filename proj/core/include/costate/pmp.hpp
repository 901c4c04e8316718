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

// Minimum-principle ground truth: control Hamiltonian, Riccati solvers,
// single-shooting for the state/co-state boundary value problem, pointwise
// Hamiltonian-minimizing readout laws and a brute-force lattice minimizer.
//
// Conventions: H(x, lambda, u) = q(x) + c(u) + lambda'(f(x) + g(x)u) and the
// switching function sigma = -1/2 g(x)' lambda, so the quadratic law
// u = R^-1 sigma is the exact minimizer of q + u'Ru + lambda'(f + gu). For
// the L1 (fuel) cost the deadzone |sigma| < 1 is exact only for
// sigma = -g' lambda; switching_function() returns that for CostKind::kFuel.
//
// Everything here is pure and safe to call concurrently.

#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "costate/envs.hpp"

namespace costate {

enum class CostKind { kQuadratic, kStateOnly, kFuel };

struct HamiltonianSpec {
  int d_x = 0;
  int d_u = 0;
  std::function<Vec(const Vec&)> f;
  std::function<Mat(const Vec&)> g;
  std::function<double(const Vec&)> q;
  std::function<Vec(const Vec&)> grad_q;
  std::function<double(const Vec&)> terminal;
  std::function<Vec(const Vec&)> grad_terminal;
  Mat R;
  /// d(f(x) + g(x)u)/dx; central differences (h = 1e-6) when unset.
  std::function<Mat(const Vec&, const Vec&)> jacobian;
  Vec u_min;
  Vec u_max;
  CostKind kind = CostKind::kQuadratic;

  void validate() const;
  double control_cost(const Vec& u) const;
  Mat closed_jacobian(const Vec& x, const Vec& u) const;
};

HamiltonianSpec hamiltonian_spec(const EnvSpec& env, CostKind kind = CostKind::kQuadratic);

/// Linear-quadratic problem x' = Ax + Bu, q = x'Qx, Phi = x'P_f x. Bounds
/// default to unbounded.
HamiltonianSpec lqr_spec(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                         const Mat& P_f, const Vec& u_min = {}, const Vec& u_max = {});

double hamiltonian(const HamiltonianSpec& spec, const Vec& x, const Vec& lambda, const Vec& u);

Vec switching_function(const HamiltonianSpec& spec, const Vec& x, const Vec& lambda);

struct RiccatiSolution {
  Mat P;
  Mat K;  // R^-1 B' P
  double residual = 0.0;
  int iterations = 0;
};

class RiccatiError : public std::runtime_error {
 public:
  RiccatiError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Frobenius norm of A'P + PA - PBR^-1B'P + Q.
double care_residual(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P);

/// Kleinman-Newton iteration from a Bass-shifted stabilizing gain. Each step
/// solves a Lyapunov equation by Kronecker vectorization. Throws
/// RiccatiError when no stabilizing start exists or the residual is > 1e-8.
RiccatiSolution solve_care(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

struct RiccatiTrajectory {
  std::vector<double> t;  // 0, dt, ..., t_f
  std::vector<Mat> P;     // P(t)
};

/// Integrates -P' = A'P + PA - PBR^-1B'P + Q backward from P(t_f) = P_f
/// with RK4. Throws std::runtime_error on divergence, naming the time.
RiccatiTrajectory riccati_ode(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                              const Mat& P_f, double t_f, double dt);

/// Gradient of x'Px.
Vec lqr_costate(const RiccatiSolution& sol, const Vec& x);

/// u = R^-1 sigma, clipped to whichever bounds are finite.
Vec readout_quadratic(const Vec& sigma, const Mat& R, const Vec& u_min = {},
                      const Vec& u_max = {});
Vec readout_bang_bang(const Vec& sigma, const Vec& u_max);
Vec readout_bang_off_bang(const Vec& sigma, const Vec& u_max);

/// Lattice argmin of `objective` over grid_n points per dimension of
/// [u_min, u_max] (d_u <= 2). Ties go to the lexicographically smallest u.
Vec grid_minimize(const std::function<double(const Vec&)>& objective, const Vec& u_min,
                  const Vec& u_max, int grid_n);
Vec grid_minimize(const HamiltonianSpec& spec, const Vec& x, const Vec& lambda, int grid_n);

struct ShootingResult {
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> lambda;
  std::vector<Vec> u;
  double terminal_defect = 0.0;
  int newton_iterations = 0;
  bool converged = false;
};

/// Single shooting on lambda(0) for x' = f + gu, lambda' = -grad q - J'lambda,
/// lambda(t_f) = grad Phi(x(t_f)), u from the quadratic readout. Newton with
/// a central-difference Jacobian and step halving, at most 50 iterations.
/// Non-convergence returns the best iterate with converged = false.
ShootingResult shoot_tpbvp(const HamiltonianSpec& spec, const Vec& x0, double t_f, double dt,
                           const Vec& lambda0_init);

/// Closed-form minimizer of the ensemble-averaged quadratic Hamiltonian,
/// -(1/2m) R^-1 G' sum(lambda_i), clipped to finite bounds.
Vec mean_hamiltonian_minimize(const std::vector<Vec>& lambdas, const Mat& G, const Mat& R,
                              const Vec& u_min = {}, const Vec& u_max = {});

}  // namespace costate
