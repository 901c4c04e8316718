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

// Control-affine continuous-time environments
//
//   x' = f(x) + g(x) u,   y = phi(x) + v,   v ~ N(0, diag(noise_std^2))
//
// integrated with classical RK4 (u held constant over a step). Rewards are
// negative costs: -(q(x) + u'Ru) dt per step, minus Phi(x_T) on the last step.

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace costate {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

struct EnvSpec {
  std::string name;
  int d_x = 0;
  int d_u = 0;
  int d_y = 0;
  double dt = 0.0;
  int episode_len = 0;
  Vec u_min;
  Vec u_max;

  std::function<Vec(const Vec&)> drift;      // f(x), d_x
  std::function<Mat(const Vec&)> influence;  // g(x), d_x x d_u
  std::function<double(const Vec&)> state_cost;
  std::function<Vec(const Vec&)> state_cost_grad;
  Mat control_weight;  // R, SPD
  std::function<double(const Vec&)> terminal_cost;
  std::function<Vec(const Vec&)> terminal_cost_grad;
  std::function<Vec(const Vec&)> obs_map;  // phi(x), d_y
  Vec noise_std;
  std::function<Vec(Rng&)> initial_state;

  /// Throws std::invalid_argument naming the violated invariant.
  void validate() const;

  Vec clip(const Vec& u) const;
  Vec dynamics(const Vec& x, const Vec& u) const { return drift(x) + influence(x) * u; }
};

struct EnvState {
  Vec x;
  int t = 0;
  bool done = false;
  Rng rng;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
  bool diverged = false;
};

struct MaskSpec {
  double p = 0.0;
};

struct MaskedObservation {
  Vec y;          // m * y_norm
  bool kept = true;  // m
};

/// One classical RK4 step of x' = f(x) + g(x)u with step spec.dt.
Vec rk4_step(const EnvSpec& spec, const Vec& x, const Vec& u);

/// Fresh episode: draws x0 from the spec's initial distribution.
EnvState reset(const EnvSpec& spec, std::uint64_t seed);
void reset(const EnvSpec& spec, EnvState& state);

/// Advances the state with clip(u). Divergence (non-finite state) ends the
/// episode and leaves x at its last finite value. Throws std::logic_error
/// when called on a finished episode.
StepResult step(const EnvSpec& spec, EnvState& state, const Vec& u);

/// y = phi(x) + v with v drawn from the state's stream.
Vec observe(const EnvSpec& spec, EnvState& state);

/// Whole-vector Bernoulli(1-p) sensor dropout: either y_norm or exact zeros.
MaskedObservation apply_mask(const Vec& y_norm, MaskSpec mask, Rng& rng);

EnvSpec double_integrator(double noise_std = 0.01);
EnvSpec pendulum_swingup(double noise_std = 0.01);
EnvSpec cartpole_swingup(double noise_std = 0.01);

/// Environment by name; throws std::invalid_argument for unknown names.
EnvSpec make_env(const std::string& name, double noise_std = 0.01);
std::vector<std::string> env_names();

namespace pendulum {
inline constexpr double kMass = 1.0;
inline constexpr double kLength = 1.0;
inline constexpr double kGravity = 9.81;
/// Mechanical energy with theta measured from upright.
double energy(const Vec& x);
}  // namespace pendulum

namespace lqr_data {
/// Linear data of the double integrator: A, B, Q, R.
Mat di_A();
Mat di_B();
Mat di_Q();
Mat di_R();
}  // namespace lqr_data

}  // namespace costate
