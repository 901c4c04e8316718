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


#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "costate/envs.hpp"

namespace costate {
namespace {

EnvSpec scalar_growth() {
  EnvSpec s;
  s.name = "growth";
  s.d_x = 1;
  s.d_u = 1;
  s.d_y = 1;
  s.dt = 0.01;
  s.episode_len = 10;
  s.u_min = Vec::Constant(1, -1);
  s.u_max = Vec::Constant(1, 1);
  s.drift = [](const Vec& x) { return x; };
  s.influence = [](const Vec&) { return Mat::Zero(1, 1); };
  s.state_cost = [](const Vec&) { return 0.0; };
  s.state_cost_grad = [](const Vec&) { return Vec::Zero(1); };
  s.control_weight = Mat::Identity(1, 1);
  s.terminal_cost = [](const Vec&) { return 0.0; };
  s.terminal_cost_grad = [](const Vec&) { return Vec::Zero(1); };
  s.obs_map = [](const Vec& x) { return x; };
  s.noise_std = Vec::Zero(1);
  s.initial_state = [](Rng&) { return Vec::Constant(1, 1.0); };
  return s;
}

TEST(Envs, BuiltinsValidate) {
  for (const std::string& name : env_names()) EXPECT_NO_THROW(make_env(name).validate()) << name;
  EXPECT_THROW(make_env("acrobot"), std::invalid_argument);
}

TEST(Envs, InvalidSpecIsRejected) {
  EnvSpec s = scalar_growth();
  s.control_weight = -Mat::Identity(1, 1);
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = scalar_growth();
  s.dt = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = scalar_growth();
  s.u_min[0] = 2;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Envs, Rk4ZeroDynamicsIsIdentity) {
  EnvSpec s = scalar_growth();
  s.drift = [](const Vec& x) { return Vec::Zero(x.size()); };
  const Vec x = Vec::Constant(1, 0.37);
  EXPECT_EQ(rk4_step(s, x, Vec::Constant(1, 0.5))[0], 0.37);
}

TEST(Envs, Rk4MatchesExponential) {
  const EnvSpec s = scalar_growth();
  const Vec x = Vec::Constant(1, 1.7);
  EXPECT_NEAR(rk4_step(s, x, Vec::Zero(1))[0], std::exp(0.01) * 1.7, 1e-10);
}

TEST(Envs, PendulumEnergyIsConservedByRk4) {
  EnvSpec s = pendulum_swingup(0.0);
  s.dt = 0.01;
  Vec x(2);
  x << 2.0, 0.5;
  const double e0 = pendulum::energy(x);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    x = rk4_step(s, x, Vec::Zero(1));
    worst = std::max(worst, std::abs(pendulum::energy(x) - e0) / std::abs(e0));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Envs, DoubleIntegratorRewards) {
  const EnvSpec s = double_integrator(0.0);
  EnvState st = reset(s, 1);
  st.x = Vec::Zero(2);
  EXPECT_EQ(step(s, st, Vec::Zero(1)).reward, 0.0);
  st.x = Vec::Zero(2);
  st.x[0] = 1.0;
  EXPECT_NEAR(step(s, st, Vec::Zero(1)).reward, -0.02, 1e-15);
}

TEST(Envs, ActionsAreClippedBeforeUse) {
  const EnvSpec s = double_integrator(0.0);
  for (double u : {-7.0, 3.5, 100.0}) {
    EnvState a = reset(s, 4), b = reset(s, 4);
    const StepResult ra = step(s, a, Vec::Constant(1, u));
    const StepResult rb = step(s, b, s.clip(Vec::Constant(1, u)));
    EXPECT_EQ(ra.reward, rb.reward);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(ra.reward, -(s.state_cost(reset(s, 4).x) + 0.1 * 4.0) * 0.02);
  }
}

TEST(Envs, StepAfterDoneThrows) {
  const EnvSpec s = double_integrator(0.0);
  EnvState st = reset(s, 0);
  for (int t = 0; t < s.episode_len; ++t) {
    const StepResult r = step(s, st, Vec::Zero(1));
    EXPECT_EQ(r.done, t + 1 == s.episode_len);
  }
  EXPECT_THROW(step(s, st, Vec::Zero(1)), std::logic_error);
}

TEST(Envs, DivergenceEndsEpisode) {
  EnvSpec s = scalar_growth();
  s.drift = [](const Vec& x) { return Vec::Constant(1, std::exp(x[0] * x[0])); };
  EnvState st = reset(s, 0);
  st.x[0] = 30.0;
  const StepResult r = step(s, st, Vec::Zero(1));
  EXPECT_TRUE(r.diverged);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(st.x.allFinite());
}

TEST(Envs, ZeroPolicyReturnMatchesClosedFormQuadrature) {
  const EnvSpec s = double_integrator(0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EnvState st = reset(s, seed);
    const double p0 = st.x[0], v0 = st.x[1];
    double ret = 0.0;
    while (!st.done) ret += step(s, st, Vec::Zero(1)).reward;
    // Uncontrolled motion is x1(t) = p0 + v0 t, x2 = v0; rewards are the
    // left-endpoint rule of the running cost on the step grid.
    double integral = 0.0;
    for (int k = 0; k < s.episode_len; ++k) {
      const double t = k * s.dt;
      const double x1 = p0 + v0 * t;
      integral += (x1 * x1 + 0.1 * v0 * v0) * s.dt;
    }
    EXPECT_NEAR(ret, -integral, 1e-8 * std::max(1.0, integral));
  }
}

TEST(Envs, ObserveIdentityAndPendulumMap) {
  const EnvSpec di = double_integrator(0.0);
  EnvState st = reset(di, 2);
  EXPECT_EQ(observe(di, st), st.x);
  const EnvSpec pd = pendulum_swingup(0.0);
  EnvState ps = reset(pd, 2);
  ps.x = Vec::Zero(2);
  const Vec y = observe(pd, ps);
  EXPECT_EQ(y, (Vec(3) << 1, 0, 0).finished());
}

TEST(Envs, ObservationNoiseStd) {
  const double sigma = 0.3;
  const EnvSpec s = double_integrator(sigma);
  EnvState st = reset(s, 11);
  const int n = 100000;
  double sq = 0.0, mean = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = observe(s, st)[0] - st.x[0];
    mean += e;
    sq += e * e;
  }
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, sigma, 0.03 * sigma);
}

TEST(Envs, MaskExtremes) {
  Rng rng(3);
  const Vec y = (Vec(3) << 0.5, -1, 2).finished();
  for (int i = 0; i < 100; ++i) {
    const MaskedObservation keep = apply_mask(y, {0.0}, rng);
    EXPECT_TRUE(keep.kept);
    EXPECT_EQ(keep.y, y);
    const MaskedObservation drop = apply_mask(y, {1.0}, rng);
    EXPECT_FALSE(drop.kept);
    EXPECT_EQ(drop.y, Vec::Zero(3));
  }
}

TEST(Envs, MaskRateIsBinomialAndAllOrNothing) {
  Rng rng(5);
  const Vec y = (Vec(4) << 0.1, 0.2, -0.3, 0.4).finished();
  const int n = 10000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) {
    const MaskedObservation m = apply_mask(y, {0.5}, rng);
    if (m.kept) {
      EXPECT_EQ(m.y, y);
    } else {
      EXPECT_EQ(m.y, Vec::Zero(4));
      ++zeros;
    }
  }
  const double sd = std::sqrt(n * 0.25);
  EXPECT_LT(std::abs(zeros - n * 0.5), 3 * sd);
}

TEST(Envs, BuiltinDynamics) {
  const EnvSpec di = double_integrator();
  const Vec x = (Vec(2) << 0.3, -0.7).finished();
  EXPECT_EQ(di.drift(x), (Vec(2) << -0.7, 0).finished());
  EXPECT_EQ(di.influence(x), (Mat(2, 1) << 0, 1).finished());

  const EnvSpec pd = pendulum_swingup();
  for (double theta : {0.0, M_PI}) {
    const Vec f = pd.drift((Vec(2) << theta, 0).finished());
    EXPECT_NEAR(f.norm(), 0.0, 1e-14) << theta;
  }

  const EnvSpec cp = cartpole_swingup();
  const Vec hang = (Vec(4) << 0, M_PI, 0, 0).finished();
  EXPECT_NEAR(cp.drift(hang).norm(), 0.0, 1e-12);
}

TEST(Envs, SameSeedSameTrajectory) {
  for (const std::string& name : env_names()) {
    const EnvSpec s = make_env(name);
    auto run = [&] {
      EnvState st = reset(s, 77);
      std::vector<double> trace;
      Rng actions(1);
      std::uniform_real_distribution<double> uni(-3, 3);
      while (!st.done) {
        const Vec y = observe(s, st);
        trace.insert(trace.end(), y.data(), y.data() + y.size());
        trace.push_back(step(s, st, Vec::Constant(s.d_u, uni(actions))).reward);
      }
      return trace;
    };
    EXPECT_EQ(run(), run()) << name;
  }
}

}  // namespace
}  // namespace costate
