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

#include "costate/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace costate {

void EnvSpec::validate() const {
  auto fail = [this](const std::string& what) {
    throw std::invalid_argument("env '" + name + "': " + what);
  };
  if (d_x <= 0 || d_u <= 0 || d_y <= 0) fail("dimensions must be positive");
  if (!(dt > 0)) fail("dt must be positive");
  if (episode_len <= 0) fail("episode_len must be positive");
  if (u_min.size() != d_u || u_max.size() != d_u) fail("bounds must have d_u entries");
  for (int i = 0; i < d_u; ++i) {
    if (!(u_min[i] < u_max[i])) fail("u_min < u_max violated");
  }
  if (control_weight.rows() != d_u || control_weight.cols() != d_u) fail("R must be d_u x d_u");
  if ((control_weight - control_weight.transpose()).norm() > 1e-12) fail("R must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(control_weight);
  if (eig.eigenvalues().minCoeff() <= 0) fail("R must be positive definite");
  if (noise_std.size() != d_y || (noise_std.array() < 0).any()) {
    fail("noise_std must have d_y non-negative entries");
  }
  if (!drift || !influence || !state_cost || !terminal_cost || !obs_map || !initial_state) {
    fail("missing model function");
  }
}

Vec EnvSpec::clip(const Vec& u) const { return u.cwiseMax(u_min).cwiseMin(u_max); }

Vec rk4_step(const EnvSpec& spec, const Vec& x, const Vec& u) {
  const double h = spec.dt;
  const Vec k1 = spec.dynamics(x, u);
  const Vec k2 = spec.dynamics(x + 0.5 * h * k1, u);
  const Vec k3 = spec.dynamics(x + 0.5 * h * k2, u);
  const Vec k4 = spec.dynamics(x + h * k3, u);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

EnvState reset(const EnvSpec& spec, std::uint64_t seed) {
  EnvState s;
  s.rng.seed(seed);
  reset(spec, s);
  return s;
}

void reset(const EnvSpec& spec, EnvState& state) {
  state.x = spec.initial_state(state.rng);
  state.t = 0;
  state.done = false;
}

StepResult step(const EnvSpec& spec, EnvState& state, const Vec& u) {
  if (state.done || state.t >= spec.episode_len) {
    throw std::logic_error("step: episode of '" + spec.name + "' already finished");
  }
  const Vec uc = spec.clip(u);
  StepResult r;
  r.reward = -(spec.state_cost(state.x) + uc.dot(spec.control_weight * uc)) * spec.dt;
  const Vec next = rk4_step(spec, state.x, uc);
  state.t += 1;
  if (!next.allFinite()) {
    r.diverged = true;
    r.done = true;
    state.done = true;
    return r;
  }
  state.x = next;
  if (state.t == spec.episode_len) {
    r.reward -= spec.terminal_cost(state.x);
    r.done = true;
    state.done = true;
  }
  return r;
}

Vec observe(const EnvSpec& spec, EnvState& state) {
  Vec y = spec.obs_map(state.x);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < spec.d_y; ++i) {
    const double z = normal(state.rng);
    y[i] += spec.noise_std[i] * z;
  }
  return y;
}

MaskedObservation apply_mask(const Vec& y_norm, MaskSpec mask, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  MaskedObservation out;
  out.kept = uniform(rng) >= mask.p;
  out.y = out.kept ? y_norm : Vec::Zero(y_norm.size());
  return out;
}

namespace {

Vec uniform_vec(Rng& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

}  // namespace

namespace lqr_data {
Mat di_A() { return (Mat(2, 2) << 0, 1, 0, 0).finished(); }
Mat di_B() { return (Mat(2, 1) << 0, 1).finished(); }
Mat di_Q() { return (Mat(2, 2) << 1, 0, 0, 0.1).finished(); }
Mat di_R() { return (Mat(1, 1) << 0.1).finished(); }
}  // namespace lqr_data

EnvSpec double_integrator(double noise_std) {
  EnvSpec s;
  s.name = "double_integrator";
  s.d_x = 2;
  s.d_u = 1;
  s.d_y = 2;
  s.dt = 0.02;
  s.episode_len = 500;
  s.u_min = Vec::Constant(1, -2.0);
  s.u_max = Vec::Constant(1, 2.0);
  const Mat A = lqr_data::di_A();
  const Mat B = lqr_data::di_B();
  const Mat Q = lqr_data::di_Q();
  s.drift = [A](const Vec& x) -> Vec { return A * x; };
  s.influence = [B](const Vec&) -> Mat { return B; };
  s.state_cost = [Q](const Vec& x) { return x.dot(Q * x); };
  s.state_cost_grad = [Q](const Vec& x) -> Vec { return 2.0 * Q * x; };
  s.control_weight = lqr_data::di_R();
  // P_f = 0
  s.terminal_cost = [](const Vec&) { return 0.0; };
  s.terminal_cost_grad = [](const Vec& x) -> Vec { return Vec::Zero(x.size()); };
  s.obs_map = [](const Vec& x) -> Vec { return x; };
  s.noise_std = Vec::Constant(2, noise_std);
  s.initial_state = [](Rng& rng) { return uniform_vec(rng, 2, -1.0, 1.0); };
  return s;
}

namespace pendulum {
double energy(const Vec& x) {
  return 0.5 * kMass * kLength * kLength * x[1] * x[1] + kMass * kGravity * kLength * std::cos(x[0]);
}
}  // namespace pendulum

// State (theta, theta_dot) with theta = 0 upright; the episode starts hanging.
EnvSpec pendulum_swingup(double noise_std) {
  using namespace pendulum;
  EnvSpec s;
  s.name = "pendulum_swingup";
  s.d_x = 2;
  s.d_u = 1;
  s.d_y = 3;
  s.dt = 0.02;
  s.episode_len = 400;
  s.u_min = Vec::Constant(1, -2.0);
  s.u_max = Vec::Constant(1, 2.0);
  s.drift = [](const Vec& x) -> Vec {
    Vec f(2);
    f << x[1], (kGravity / kLength) * std::sin(x[0]);
    return f;
  };
  s.influence = [](const Vec&) -> Mat {
    return (Mat(2, 1) << 0, 1.0 / (kMass * kLength * kLength)).finished();
  };
  s.state_cost = [](const Vec& x) { return (1.0 - std::cos(x[0])) + 0.01 * x[1] * x[1]; };
  s.state_cost_grad = [](const Vec& x) -> Vec {
    return (Vec(2) << std::sin(x[0]), 0.02 * x[1]).finished();
  };
  s.control_weight = Mat::Constant(1, 1, 0.01);
  s.terminal_cost = [](const Vec&) { return 0.0; };
  s.terminal_cost_grad = [](const Vec& x) -> Vec { return Vec::Zero(x.size()); };
  s.obs_map = [](const Vec& x) -> Vec {
    return (Vec(3) << std::cos(x[0]), std::sin(x[0]), x[1]).finished();
  };
  s.noise_std = Vec::Constant(3, noise_std);
  s.initial_state = [](Rng& rng) {
    Vec x = uniform_vec(rng, 2, -0.05, 0.05);
    x[0] += M_PI;
    return x;
  };
  return s;
}

namespace {

constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kPoleHalfLength = 0.5;
constexpr double kCartGravity = 9.81;

// (x, theta, x_dot, theta_dot) accelerations; affine in the force u.
Vec cartpole_rates(const Vec& s, double u) {
  const double total = kCartMass + kPoleMass;
  const double pml = kPoleMass * kPoleHalfLength;
  const double sin_t = std::sin(s[1]);
  const double cos_t = std::cos(s[1]);
  const double temp = (u + pml * s[3] * s[3] * sin_t) / total;
  const double theta_acc = (kCartGravity * sin_t - cos_t * temp) /
                           (kPoleHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total));
  const double x_acc = temp - pml * theta_acc * cos_t / total;
  return (Vec(4) << s[2], s[3], x_acc, theta_acc).finished();
}

}  // namespace

EnvSpec cartpole_swingup(double noise_std) {
  EnvSpec s;
  s.name = "cartpole_swingup";
  s.d_x = 4;
  s.d_u = 1;
  s.d_y = 5;
  s.dt = 0.02;
  s.episode_len = 500;
  s.u_min = Vec::Constant(1, -10.0);
  s.u_max = Vec::Constant(1, 10.0);
  s.drift = [](const Vec& x) -> Vec { return cartpole_rates(x, 0.0); };
  s.influence = [](const Vec& x) -> Mat {
    Mat g(4, 1);
    g.col(0) = cartpole_rates(x, 1.0) - cartpole_rates(x, 0.0);
    return g;
  };
  s.state_cost = [](const Vec& x) {
    return (1.0 - std::cos(x[1])) + 0.1 * x[0] * x[0] + 0.01 * (x[2] * x[2] + x[3] * x[3]);
  };
  s.state_cost_grad = [](const Vec& x) -> Vec {
    return (Vec(4) << 0.2 * x[0], std::sin(x[1]), 0.02 * x[2], 0.02 * x[3]).finished();
  };
  s.control_weight = Mat::Constant(1, 1, 0.001);
  s.terminal_cost = [](const Vec&) { return 0.0; };
  s.terminal_cost_grad = [](const Vec& x) -> Vec { return Vec::Zero(x.size()); };
  s.obs_map = [](const Vec& x) -> Vec {
    return (Vec(5) << x[0], std::cos(x[1]), std::sin(x[1]), x[2], x[3]).finished();
  };
  s.noise_std = Vec::Constant(5, noise_std);
  s.initial_state = [](Rng& rng) {
    Vec x = uniform_vec(rng, 4, -0.05, 0.05);
    x[1] += M_PI;
    return x;
  };
  return s;
}

std::vector<std::string> env_names() {
  return {"double_integrator", "pendulum_swingup", "cartpole_swingup"};
}

EnvSpec make_env(const std::string& name, double noise_std) {
  if (name == "double_integrator") return double_integrator(noise_std);
  if (name == "pendulum_swingup") return pendulum_swingup(noise_std);
  if (name == "cartpole_swingup") return cartpole_swingup(noise_std);
  throw std::invalid_argument("unknown environment '" + name + "'");
}

}  // namespace costate
