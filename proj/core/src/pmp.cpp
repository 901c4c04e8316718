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

#include "costate/pmp.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

namespace costate {

namespace {

constexpr double kJacobianStep = 1e-6;
constexpr double kCareResidualTol = 1e-8;
constexpr double kKleinmanTol = 1e-12;
constexpr int kKleinmanMaxIter = 100;
constexpr double kShootingTol = 1e-8;
constexpr int kShootingMaxIter = 50;

Vec clip_finite(Vec u, const Vec& lo, const Vec& hi) {
  for (int i = 0; i < u.size(); ++i) {
    if (lo.size() == u.size() && std::isfinite(lo[i])) u[i] = std::max(u[i], lo[i]);
    if (hi.size() == u.size() && std::isfinite(hi[i])) u[i] = std::min(u[i], hi[i]);
  }
  return u;
}

bool is_hurwitz(const Mat& M) {
  Eigen::EigenSolver<Mat> es(M, false);
  return (es.eigenvalues().real().array() < 0).all();
}

Vec vec_col(const Mat& M) { return Eigen::Map<const Vec>(M.data(), M.size()); }

// Solves Ac'P + P Ac = -C for symmetric C.
Mat solve_lyapunov(const Mat& Ac, const Mat& C) {
  const int n = static_cast<int>(Ac.rows());
  const Mat I = Mat::Identity(n, n);
  Mat M(n * n, n * n);
  const Mat At = Ac.transpose();
  // vec(A'P) = (I kron A') vec(P), vec(P A) = (A' kron I) vec(P).
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      M.block(i * n, j * n, n, n) = I(i, j) * At + At(i, j) * I;
    }
  }
  const Vec p = M.colPivHouseholderQr().solve(-vec_col(C));
  Mat P = Eigen::Map<const Mat>(p.data(), n, n);
  return 0.5 * (P + P.transpose());
}

Mat riccati_rhs(const Mat& A, const Mat& BRB, const Mat& Q, const Mat& P) {
  return A.transpose() * P + P * A - P * BRB * P + Q;
}

}  // namespace

void HamiltonianSpec::validate() const {
  if (d_x <= 0 || d_u <= 0) throw std::invalid_argument("hamiltonian spec: bad dimensions");
  if (!f || !g || !q) throw std::invalid_argument("hamiltonian spec: missing f, g or q");
  if (kind == CostKind::kQuadratic) {
    if (R.rows() != d_u || R.cols() != d_u) throw std::invalid_argument("hamiltonian spec: R shape");
    Eigen::SelfAdjointEigenSolver<Mat> eig(R);
    if (eig.eigenvalues().minCoeff() <= 0) throw std::invalid_argument("hamiltonian spec: R not SPD");
  } else {
    if (u_min.size() != d_u || u_max.size() != d_u || !u_min.allFinite() || !u_max.allFinite()) {
      throw std::invalid_argument("hamiltonian spec: state-only and fuel costs need finite bounds");
    }
  }
}

double HamiltonianSpec::control_cost(const Vec& u) const {
  switch (kind) {
    case CostKind::kQuadratic: return u.dot(R * u);
    case CostKind::kStateOnly: return 0.0;
    case CostKind::kFuel: return u.lpNorm<1>();
  }
  return 0.0;
}

Mat HamiltonianSpec::closed_jacobian(const Vec& x, const Vec& u) const {
  if (jacobian) return jacobian(x, u);
  Mat J(d_x, d_x);
  Vec xp = x, xm = x;
  for (int i = 0; i < d_x; ++i) {
    xp[i] = x[i] + kJacobianStep;
    xm[i] = x[i] - kJacobianStep;
    J.col(i) = ((f(xp) + g(xp) * u) - (f(xm) + g(xm) * u)) / (2.0 * kJacobianStep);
    xp[i] = xm[i] = x[i];
  }
  return J;
}

HamiltonianSpec hamiltonian_spec(const EnvSpec& env, CostKind kind) {
  HamiltonianSpec h;
  h.d_x = env.d_x;
  h.d_u = env.d_u;
  h.f = env.drift;
  h.g = env.influence;
  h.q = env.state_cost;
  h.grad_q = env.state_cost_grad;
  h.terminal = env.terminal_cost;
  h.grad_terminal = env.terminal_cost_grad;
  h.R = env.control_weight;
  h.u_min = env.u_min;
  h.u_max = env.u_max;
  h.kind = kind;
  return h;
}

HamiltonianSpec lqr_spec(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P_f,
                         const Vec& u_min, const Vec& u_max) {
  HamiltonianSpec h;
  h.d_x = static_cast<int>(A.rows());
  h.d_u = static_cast<int>(B.cols());
  h.f = [A](const Vec& x) -> Vec { return A * x; };
  h.g = [B](const Vec&) -> Mat { return B; };
  h.q = [Q](const Vec& x) { return x.dot(Q * x); };
  h.grad_q = [Q](const Vec& x) -> Vec { return (Q + Q.transpose()) * x; };
  h.terminal = [P_f](const Vec& x) { return x.dot(P_f * x); };
  h.grad_terminal = [P_f](const Vec& x) -> Vec { return (P_f + P_f.transpose()) * x; };
  h.jacobian = [A](const Vec&, const Vec&) -> Mat { return A; };
  h.R = R;
  const double inf = std::numeric_limits<double>::infinity();
  h.u_min = u_min.size() ? u_min : Vec::Constant(h.d_u, -inf);
  h.u_max = u_max.size() ? u_max : Vec::Constant(h.d_u, inf);
  h.kind = CostKind::kQuadratic;
  return h;
}

double hamiltonian(const HamiltonianSpec& spec, const Vec& x, const Vec& lambda, const Vec& u) {
  return spec.q(x) + spec.control_cost(u) + lambda.dot(spec.f(x) + spec.g(x) * u);
}

Vec switching_function(const HamiltonianSpec& spec, const Vec& x, const Vec& lambda) {
  const double factor = spec.kind == CostKind::kFuel ? -1.0 : -0.5;
  return factor * spec.g(x).transpose() * lambda;
}

double care_residual(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P) {
  const Mat BRB = B * R.llt().solve(B.transpose());
  return riccati_rhs(A, BRB, Q, P).norm();
}

RiccatiSolution solve_care(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != B.cols() ||
      R.cols() != B.cols()) {
    throw std::invalid_argument("solve_care: inconsistent dimensions");
  }
  if (n > 6) throw std::invalid_argument("solve_care: limited to d_x <= 6");
  const Eigen::LLT<Mat> Rllt(R);
  if (Rllt.info() != Eigen::Success) throw std::invalid_argument("solve_care: R not SPD");
  const Mat I = Mat::Identity(n, n);

  // Bass: with beta > |A|, K0 = B'Z^-1 from (A + bI)Z + Z(A + bI)' = 2BB'
  // places the eigenvalues of A - BK0 left of -beta. Grow beta if needed.
  Mat K;
  bool stabilized = false;
  double beta = A.lpNorm<1>() + 1.0;
  for (int attempt = 0; attempt < 20 && !stabilized; ++attempt, beta *= 2.0) {
    const Mat Ab = A + beta * I;
    // Ab Z + Z Ab' = 2BB'  <=>  (-Ab')' Z + Z (-Ab') = -2BB'
    const Mat Z = solve_lyapunov(-Ab.transpose(), 2.0 * B * B.transpose());
    Eigen::FullPivLU<Mat> lu(Z);
    if (!lu.isInvertible()) continue;
    K = B.transpose() * lu.inverse();
    stabilized = K.allFinite() && is_hurwitz(A - B * K);
  }
  if (!stabilized) {
    throw RiccatiError("solve_care: no stabilizing initial gain found", std::nan(""));
  }

  RiccatiSolution sol;
  Mat P = Mat::Zero(n, n);
  for (int it = 1; it <= kKleinmanMaxIter; ++it) {
    const Mat Ac = A - B * K;
    const Mat P_next = solve_lyapunov(Ac, Q + K.transpose() * R * K);
    const double delta = (P_next - P).norm();
    P = P_next;
    K = Rllt.solve(B.transpose() * P);
    sol.iterations = it;
    if (delta < kKleinmanTol) break;
  }
  sol.P = P;
  sol.K = K;
  sol.residual = care_residual(A, B, Q, R, P);
  if (!(sol.residual < kCareResidualTol)) {
    std::ostringstream os;
    os << "solve_care: residual " << sol.residual << " exceeds " << kCareResidualTol;
    throw RiccatiError(os.str(), sol.residual);
  }
  return sol;
}

RiccatiTrajectory riccati_ode(const Mat& A, const Mat& B, const Mat& Q, const Mat& R,
                              const Mat& P_f, double t_f, double dt) {
  if (!(dt > 0) || !(t_f > 0)) throw std::invalid_argument("riccati_ode: t_f and dt must be positive");
  const double steps_real = t_f / dt;
  const long steps = std::lround(steps_real);
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-9 * std::max(1.0, steps_real)) {
    throw std::invalid_argument("riccati_ode: dt must divide t_f");
  }
  const Mat BRB = B * R.llt().solve(B.transpose());
  RiccatiTrajectory out;
  out.t.resize(steps + 1);
  out.P.resize(steps + 1);
  // Integrate in time-to-go tau = t_f - t, where dP/dtau = rhs(P).
  Mat P = P_f;
  out.P[steps] = P;
  out.t[steps] = t_f;
  for (long k = steps; k > 0; --k) {
    const Mat k1 = riccati_rhs(A, BRB, Q, P);
    const Mat k2 = riccati_rhs(A, BRB, Q, P + 0.5 * dt * k1);
    const Mat k3 = riccati_rhs(A, BRB, Q, P + 0.5 * dt * k2);
    const Mat k4 = riccati_rhs(A, BRB, Q, P + dt * k3);
    P = P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    P = 0.5 * (P + P.transpose());
    const double t = static_cast<double>(k - 1) * dt;
    if (!P.allFinite()) {
      std::ostringstream os;
      os << "riccati_ode: non-finite P at t = " << t;
      throw std::runtime_error(os.str());
    }
    out.P[k - 1] = P;
    out.t[k - 1] = t;
  }
  return out;
}

Vec lqr_costate(const RiccatiSolution& sol, const Vec& x) { return 2.0 * sol.P * x; }

Vec readout_quadratic(const Vec& sigma, const Mat& R, const Vec& u_min, const Vec& u_max) {
  return clip_finite(R.llt().solve(sigma), u_min, u_max);
}

Vec readout_bang_bang(const Vec& sigma, const Vec& u_max) {
  Vec u = Vec::Zero(sigma.size());
  for (int i = 0; i < sigma.size(); ++i) {
    if (sigma[i] > 0) u[i] = u_max[i];
    if (sigma[i] < 0) u[i] = -u_max[i];
  }
  return u;
}

Vec readout_bang_off_bang(const Vec& sigma, const Vec& u_max) {
  Vec u = Vec::Zero(sigma.size());
  for (int i = 0; i < sigma.size(); ++i) {
    if (sigma[i] > 1.0) u[i] = u_max[i];
    if (sigma[i] < -1.0) u[i] = -u_max[i];
  }
  return u;
}

Vec grid_minimize(const std::function<double(const Vec&)>& objective, const Vec& u_min,
                  const Vec& u_max, int grid_n) {
  const int d = static_cast<int>(u_min.size());
  if (d < 1 || d > 2 || u_max.size() != d) throw std::invalid_argument("grid_minimize: d_u must be 1 or 2");
  if (grid_n < 3) throw std::invalid_argument("grid_minimize: grid_n must be >= 3");
  if (!u_min.allFinite() || !u_max.allFinite()) throw std::invalid_argument("grid_minimize: bounds must be finite");
  auto node = [&](int dim, int k) {
    return u_min[dim] + (u_max[dim] - u_min[dim]) * static_cast<double>(k) / (grid_n - 1);
  };
  Vec best(d), u(d);
  double best_value = std::numeric_limits<double>::infinity();
  const int inner = d == 2 ? grid_n : 1;
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < inner; ++j) {
      u[0] = node(0, i);
      if (d == 2) u[1] = node(1, j);
      const double v = objective(u);
      if (v < best_value) {
        best_value = v;
        best = u;
      }
    }
  }
  return best;
}

Vec grid_minimize(const HamiltonianSpec& spec, const Vec& x, const Vec& lambda, int grid_n) {
  return grid_minimize([&](const Vec& u) { return hamiltonian(spec, x, lambda, u); }, spec.u_min,
                       spec.u_max, grid_n);
}

namespace {

struct ShootingPass {
  std::vector<Vec> x, lambda, u;
  Vec defect;
};

ShootingPass integrate_extremal(const HamiltonianSpec& spec, const Vec& x0, const Vec& lambda0,
                                long steps, double dt, bool keep_path) {
  const int n = spec.d_x;
  auto control = [&](const Vec& x, const Vec& lam) {
    return readout_quadratic(switching_function(spec, x, lam), spec.R, spec.u_min, spec.u_max);
  };
  auto rhs = [&](const Vec& z) {
    const Vec x = z.head(n);
    const Vec lam = z.tail(n);
    const Vec u = control(x, lam);
    Vec dz(2 * n);
    dz.head(n) = spec.f(x) + spec.g(x) * u;
    dz.tail(n) = -spec.grad_q(x) - spec.closed_jacobian(x, u).transpose() * lam;
    return dz;
  };
  Vec z(2 * n);
  z << x0, lambda0;
  ShootingPass pass;
  auto record = [&](const Vec& s) {
    if (!keep_path) return;
    pass.x.push_back(s.head(n));
    pass.lambda.push_back(s.tail(n));
    pass.u.push_back(control(s.head(n), s.tail(n)));
  };
  record(z);
  for (long k = 0; k < steps; ++k) {
    const Vec k1 = rhs(z);
    const Vec k2 = rhs(z + 0.5 * dt * k1);
    const Vec k3 = rhs(z + 0.5 * dt * k2);
    const Vec k4 = rhs(z + dt * k3);
    z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!z.allFinite()) break;
    record(z);
  }
  const Vec xf = z.head(n);
  const Vec grad_phi = spec.grad_terminal ? spec.grad_terminal(xf) : Vec::Zero(n);
  pass.defect = z.tail(n) - grad_phi;
  if (!pass.defect.allFinite()) {
    pass.defect = Vec::Constant(n, std::numeric_limits<double>::max());
  }
  return pass;
}

}  // namespace

ShootingResult shoot_tpbvp(const HamiltonianSpec& spec, const Vec& x0, double t_f, double dt,
                           const Vec& lambda0_init) {
  spec.validate();
  if (spec.kind != CostKind::kQuadratic) {
    throw std::invalid_argument("shoot_tpbvp: requires the quadratic cost kind");
  }
  if (spec.d_x > 4) throw std::invalid_argument("shoot_tpbvp: limited to d_x <= 4");
  if (!spec.grad_q) throw std::invalid_argument("shoot_tpbvp: grad_q required");
  const long steps = std::lround(t_f / dt);
  if (steps <= 0 || std::abs(steps * dt - t_f) > 1e-9 * std::max(1.0, t_f)) {
    throw std::invalid_argument("shoot_tpbvp: dt must divide t_f");
  }
  const int n = spec.d_x;
  Vec lam0 = lambda0_init;
  Vec defect = integrate_extremal(spec, x0, lam0, steps, dt, false).defect;
  double defect_norm = defect.norm();
  int iterations = 0;
  while (defect_norm >= kShootingTol && iterations < kShootingMaxIter) {
    ++iterations;
    Mat J(n, n);
    for (int i = 0; i < n; ++i) {
      Vec lp = lam0, lm = lam0;
      const double h = kJacobianStep * std::max(1.0, std::abs(lam0[i]));
      lp[i] += h;
      lm[i] -= h;
      J.col(i) = (integrate_extremal(spec, x0, lp, steps, dt, false).defect -
                  integrate_extremal(spec, x0, lm, steps, dt, false).defect) /
                 (2.0 * h);
    }
    const Vec delta = J.fullPivLu().solve(-defect);
    double step = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 30; ++halving, step *= 0.5) {
      const Vec trial = lam0 + step * delta;
      const Vec trial_defect = integrate_extremal(spec, x0, trial, steps, dt, false).defect;
      if (trial_defect.norm() < defect_norm) {
        lam0 = trial;
        defect = trial_defect;
        defect_norm = trial_defect.norm();
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  ShootingPass pass = integrate_extremal(spec, x0, lam0, steps, dt, true);
  ShootingResult out;
  out.x = std::move(pass.x);
  out.lambda = std::move(pass.lambda);
  out.u = std::move(pass.u);
  out.t.resize(out.x.size());
  for (std::size_t k = 0; k < out.t.size(); ++k) out.t[k] = static_cast<double>(k) * dt;
  out.terminal_defect = pass.defect.norm();
  out.newton_iterations = iterations;
  out.converged = out.terminal_defect < kShootingTol;
  return out;
}

Vec mean_hamiltonian_minimize(const std::vector<Vec>& lambdas, const Mat& G, const Mat& R,
                              const Vec& u_min, const Vec& u_max) {
  if (lambdas.empty()) throw std::invalid_argument("mean_hamiltonian_minimize: empty ensemble");
  Vec total = Vec::Zero(G.rows());
  for (const Vec& l : lambdas) total += l;
  const double m = static_cast<double>(lambdas.size());
  const Vec u = -(1.0 / (2.0 * m)) * R.llt().solve(G.transpose() * total);
  return clip_finite(u, u_min, u_max);
}

}  // namespace costate
