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
#include <random>
#include <string_view>
#include <vector>

#include "costate/trainer.hpp"
#include "objective_fixture.hpp"
#include "test_support.hpp"

namespace costate {
namespace {

using testing::random_tensor;

TrainConfig small_config(const std::string& env = "double_integrator") {
  TrainConfig c;
  c.env = env;
  c.num_envs = 4;
  c.unroll = 8;
  c.total_steps = 4 * 8 * 3;
  c.num_minibatches = 2;
  c.ppo_epochs = 2;
  c.d_h = 6;
  c.seed = 3;
  return c;
}

TEST(Trainer, ConfigValidationNamesTheKey) {
  TrainConfig c = small_config();
  c.num_minibatches = 3;
  try {
    c.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("num_minibatches"), std::string::npos);
  }
  c = small_config();
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.env.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Trainer, NormalizeExamples) {
  RunningStats s(2);
  Mat batch(2, 3);
  batch << 1, 2, 3, -4, 0, 4;
  s.update(batch);
  const Vec at_mean = s.mean();
  EXPECT_LT(s.normalize(at_mean).norm(), 1e-15);
  const Vec far = s.mean() + 100.0 * s.var().cwiseSqrt();
  EXPECT_EQ(s.normalize(far), Vec::Constant(2, 10.0));
  EXPECT_EQ(s.normalize(s.mean() - 100.0 * s.var().cwiseSqrt()), Vec::Constant(2, -10.0));
}

TEST(Trainer, StatsMatchTwoPassMoments) {
  RunningStats s(1);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(2.0, 3.0);
  std::vector<double> all;
  for (int b = 0; b < 50; ++b) {
    Mat batch(1, 7);
    for (int j = 0; j < 7; ++j) all.push_back(batch(0, j) = normal(rng));
    s.update(batch);
  }
  // Prior pseudo-count 1e-4 at mean 0, variance 1.
  const double n = all.size(), c0 = 1e-4;
  double sum = 0;
  for (double v : all) sum += v;
  const double mean = sum / (n + c0);
  double m2 = c0 * (1.0 + mean * mean);
  for (double v : all) m2 += (v - mean) * (v - mean);
  EXPECT_NEAR(s.mean()[0], mean, 1e-12);
  EXPECT_NEAR(s.var()[0], m2 / (n + c0), 1e-10);
  EXPECT_NEAR(s.count(), n + c0, 1e-9);
}

TEST(Trainer, ConstantStreamNormalizesToZero) {
  RunningStats s(3);
  const Vec c = (Vec(3) << 5, -2, 0.5).finished();
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec y = normalize_obs(s, c);
    if (i == 0) first = y.cwiseAbs().maxCoeff();
    last = y.cwiseAbs().maxCoeff();
  }
  EXPECT_LT(last, 1e-2);
  EXPECT_LT(last, first);
  EXPECT_LT(s.var().maxCoeff(), 1e-3);
  EXPECT_GE(s.var().minCoeff(), 0.0);
}

TEST(Trainer, RewardScalerExamples) {
  ReturnScaler zero(3, 0.99);
  for (int i = 0; i < 50; ++i) {
    for (double r : zero.scale({0, 0, 0}, {false, false, false})) EXPECT_EQ(r, 0.0);
  }
  ReturnScaler sc(1, 0.0);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::vector<double> out;
  for (int i = 0; i < 10000; ++i) out.push_back(sc.scale({normal(rng)}, {false})[0]);
  double m = 0, m2 = 0;
  for (double v : out) {
    m += v;
    m2 += v * v;
  }
  m /= out.size();
  const double sd = std::sqrt(m2 / out.size() - m * m);
  EXPECT_NEAR(sd, 1.0, 0.1);

  ReturnScaler big(2, 0.99);
  for (int i = 0; i < 100; ++i) {
    for (double r : big.scale({1e6 * (i % 3 == 0), -1e6}, {false, i % 7 == 0})) EXPECT_LE(std::abs(r), 10.0);
  }
}

TEST(Trainer, ReturnScalerRestartsAfterDone) {
  ReturnScaler sc(1, 0.5);
  sc.scale({1.0}, {false});
  EXPECT_DOUBLE_EQ(sc.returns()[0], 1.0);
  sc.scale({1.0}, {true});  // R = 1.5 enters the statistics, then restarts
  EXPECT_DOUBLE_EQ(sc.returns()[0], 0.0);
  sc.scale({2.0}, {false});
  EXPECT_DOUBLE_EQ(sc.returns()[0], 2.0);
}

TEST(Trainer, GaeMatchesDoubleSum) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uni(-1, 1);
  for (int inst = 0; inst < 100; ++inst) {
    const int T = 1 + inst % 16, B = 1 + inst % 3;
    std::vector<double> r(T * B), v(T * B), d(T * B), boot(B);
    for (int i = 0; i < T * B; ++i) {
      r[i] = uni(rng);
      v[i] = uni(rng);
      d[i] = (inst % 2 == 1 && uni(rng) > 0.6) ? 1.0 : 0.0;
    }
    for (double& b : boot) b = uni(rng);
    const GaeResult g = compute_gae(T, B, r, v, d, boot, 0.99, 0.95);
    const std::vector<double> ref = testing::gae_double_sum(T, B, r, v, d, boot, 0.99, 0.95);
    for (int i = 0; i < T * B; ++i) {
      EXPECT_NEAR(g.advantage[i], ref[i], 1e-12);
      EXPECT_NEAR(g.returns[i], ref[i] + v[i], 1e-12);
    }
  }
}

TEST(Trainer, GaeSpecialCases) {
  const GaeResult one = compute_gae(1, 1, {0.5}, {0.2}, {0.0}, {1.0}, 0.9, 0.95);
  EXPECT_DOUBLE_EQ(one.advantage[0], 0.5 + 0.9 * 1.0 - 0.2);
  const GaeResult term = compute_gae(1, 1, {0.5}, {0.2}, {1.0}, {1.0}, 0.9, 0.95);
  EXPECT_DOUBLE_EQ(term.advantage[0], 0.5 - 0.2);
  const std::vector<double> r{1, 2, 3}, v{0.1, 0.2, 0.3};
  const GaeResult td = compute_gae(3, 1, r, v, {0, 0, 0}, {0.4}, 0.9, 0.0);
  for (int t = 0; t < 3; ++t) {
    const double next = t == 2 ? 0.4 : v[t + 1];
    EXPECT_DOUBLE_EQ(td.advantage[t], r[t] + 0.9 * next - v[t]);
  }
}

TEST(Trainer, CostateLossAnchors) {
  auto loss = [](const Tensor& h, const Tensor& l) {
    Tape t;
    return t.value(costate_loss(t, t.input(h), l)).item();
  };
  const Tensor lam = Tensor::matrix(3, 1, {0.3, -1.2, 2.0});
  Tensor neg = lam;
  for (double& v : neg.data) v = -v;
  EXPECT_NEAR(loss(lam, lam), 0.0, 1e-6);
  EXPECT_NEAR(loss(neg, lam), 2.0, 1e-6);
  EXPECT_DOUBLE_EQ(loss(Tensor::matrix(2, 1, {1, 0}), Tensor::matrix(2, 1, {0, 3})), 1.0);
  // Degenerate zero target: bounded by the stabilizer.
  EXPECT_DOUBLE_EQ(loss(lam, Tensor::zeros(Shape::matrix(3, 1))), 1.0);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const double v = loss(random_tensor(Shape::matrix(4, 5), rng), random_tensor(Shape::matrix(4, 5), rng));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0 + 1e-6);
  }
}

TEST(Trainer, CostateLossGradientIsInHOnly) {
  std::mt19937_64 rng(5);
  const Tensor h0 = random_tensor(Shape::matrix(4, 3), rng);
  const Tensor l = random_tensor(Shape::matrix(4, 3), rng);
  auto f = [&](const std::vector<double>& h, Tensor* g) {
    Tape t;
    const Var hv = t.input(Tensor(h0.shape, h));
    const Var out = costate_loss(t, hv, l);
    if (g) *g = t.grad_wrt(out, hv);
    return t.value(out).item();
  };
  Tensor g;
  f(h0.data, &g);
  EXPECT_LT(testing::check_gradient([&](const auto& h) { return f(h, nullptr); }, h0.data, g.data, 1e-6, 1e-3, false)
                .max_rel_error,
            1e-6);
}

TEST(Trainer, CostateTargetsMatchFiniteDifferences) {
  const PolicyParams p = testing::perturbed_params({3, 4, 1}, Arch::kGru, 4);
  std::mt19937_64 rng(9);
  const Tensor enc = random_tensor(Shape::matrix(4, 3), rng);
  const Tensor h = random_tensor(Shape::matrix(4, 3), rng);
  const Tensor lam = costate_targets(p, enc, h);
  ASSERT_EQ(lam.shape, Shape::matrix(4, 3));
  auto value = [&](const Tensor& e) {
    Tape t;
    PolicyGraph g(t, p, 3);
    return t.value(t.sum(g.critic_value(t.constant(e), t.constant(h)))).item();
  };
  for (std::size_t i = 0; i < enc.size(); ++i) {
    Tensor ep = enc, em = enc;
    ep[i] += 1e-6;
    em[i] -= 1e-6;
    const double fd = (value(ep) - value(em)) / 2e-6;
    EXPECT_LT(testing::relative_error(lam[i], fd, 1e-3), 1e-6);
  }

  PolicyParams blind = p;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) blind.W_c1(r, c) = 0.0;
  }
  for (double v : costate_targets(blind, enc, h).data) EXPECT_EQ(v, 0.0);
}

TEST(Trainer, CriticGetsNoGradientFromCostateTerm) {
  const PolicyParams p = testing::perturbed_params({3, 4, 2}, Arch::kGru, 5);
  Segment seg = testing::synthetic_segment(p, 6, 2, 7);
  for (auto& row : seg.advantage) std::fill(row.begin(), row.end(), 0.0);
  LossCoefficients only_costate{0.2, 0.0, 0.0, 1.0};
  const LossEvaluation e = evaluate_loss(p, seg, only_costate, true);
  double recurrent = 0.0;
  for (const auto& [name, t] : e.grads->named()) {
    if (PolicyParams::is_critic(name)) {
      for (double v : t->data) EXPECT_EQ(v, 0.0) << name;
    }
    if (name == std::string_view("U_z")) {
      for (double v : t->data) recurrent += std::abs(v);
    }
  }
  EXPECT_GT(recurrent, 0.0);
}

TEST(Trainer, NullObjectiveHasZeroGradientAndNoUpdate) {
  const PolicyParams p = testing::perturbed_params({3, 4, 2}, Arch::kCtrnn, 5);
  Segment seg = testing::synthetic_segment(p, 6, 2, 7);
  for (auto& row : seg.advantage) std::fill(row.begin(), row.end(), 0.0);
  const LossEvaluation e = evaluate_loss(p, seg, LossCoefficients{0.2, 0.0, 0.0, 0.0}, true);
  for (const auto& [name, t] : e.grads->named()) {
    for (double v : t->data) EXPECT_EQ(v, 0.0) << name;
  }
  AdamState st = AdamState::zeros_like(p);
  const PolicyParams delta = adam_step(st, *e.grads, 1e-3, 1e-5);
  for (const auto& [name, t] : delta.named()) {
    for (double v : t->data) EXPECT_EQ(v, 0.0) << name;
  }
}

TEST(Trainer, SmallBatchObjectiveMatchesFiniteDifferences) {
  for (Arch arch : {Arch::kGru, Arch::kCtrnn}) {
    const testing::ObjectiveCheck r = testing::check_full_objective(arch, 4, 2, 1e-3, 1e-4, 21);
    EXPECT_LT(r.max_rel_error, 1e-6) << arch_name(arch);
  }
}

TEST(Trainer, NonFiniteLossNamesTheTerm) {
  PolicyParams p = testing::perturbed_params({3, 4, 2}, Arch::kGru, 5);
  Segment seg = testing::synthetic_segment(p, 4, 2, 7);
  seg.logp_old[1][0] = -1e6;  // ratio overflows
  try {
    evaluate_loss(p, seg, LossCoefficients{}, true);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("actor"), std::string::npos) << e.what();
  }
}

TEST(Trainer, AdamSingleStepReference) {
  const PolicyParams p = init_params(0, {2, 3, 1}, Arch::kGru);
  PolicyParams g = p.zeros_like();
  std::mt19937_64 rng(6);
  for (auto& [name, t] : g.named()) {
    for (double& v : t->data) v = std::uniform_real_distribution<double>(-2, 2)(rng);
  }
  AdamState st = AdamState::zeros_like(p);
  const double lr = 3e-4, eps = 1e-5;
  const PolicyParams d1 = adam_step(st, g, lr, eps);
  const auto gn = g.named();
  const auto dn = d1.named();
  for (std::size_t k = 0; k < gn.size(); ++k) {
    for (std::size_t i = 0; i < gn[k].second->size(); ++i) {
      const double gi = (*gn[k].second)[i];
      EXPECT_NEAR((*dn[k].second)[i], -lr * gi / (std::abs(gi) + eps), 1e-18);
    }
  }
  // Second step with the same gradient, explicit moment recursion.
  const PolicyParams d2 = adam_step(st, g, lr, eps);
  const auto dn2 = d2.named();
  for (std::size_t k = 0; k < gn.size(); ++k) {
    for (std::size_t i = 0; i < gn[k].second->size(); ++i) {
      const double gi = (*gn[k].second)[i];
      const double m = 0.9 * 0.1 * gi + 0.1 * gi, v = 0.999 * 0.001 * gi * gi + 0.001 * gi * gi;
      const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
      EXPECT_NEAR((*dn2[k].second)[i], -lr * mh / (std::sqrt(vh) + eps), 1e-15);
    }
  }
}

TEST(Trainer, GradientClipping) {
  const PolicyParams p = init_params(0, {2, 3, 1}, Arch::kGru);
  PolicyParams g = p.zeros_like();
  std::mt19937_64 rng(7);
  for (auto& [name, t] : g.named()) {
    for (double& v : t->data) v = std::normal_distribution<double>()(rng);
  }
  const double n0 = global_norm(g);
  for (auto& [name, t] : g.named()) {
    for (double& v : t->data) v *= 10.0 / n0;
  }
  EXPECT_NEAR(clip_by_global_norm(g, 0.5), 10.0, 1e-12);
  EXPECT_NEAR(global_norm(g), 0.5, 1e-12);
  PolicyParams small = g;
  clip_by_global_norm(small, 2.0);
  EXPECT_EQ(small.W_enc.data, g.W_enc.data);
}

TEST(Trainer, MinimalRolloutShapes) {
  TrainConfig c = small_config();
  c.num_envs = 1;
  c.unroll = 1;
  c.num_minibatches = 1;
  c.total_steps = 1;
  Trainer tr(c);
  RolloutBuffer b = tr.collect_rollout();
  EXPECT_EQ(b.T, 1);
  EXPECT_EQ(b.B, 1);
  EXPECT_EQ(b.logp_old.size(), 1u);
  EXPECT_EQ(b.y_tilde.size(), static_cast<std::size_t>(b.d_y));
  EXPECT_EQ(b.costate_target.size(), static_cast<std::size_t>(c.d_h));
  EXPECT_FALSE(b.has_advantages());
  compute_gae(b, c.gamma, c.gae_lambda);
  EXPECT_EQ(b.advantage.size(), 1u);
  // Singleton minibatch: normalized advantage is 0, update stays finite.
  const UpdateStats u = tr.ppo_update(b);
  EXPECT_TRUE(std::isfinite(u.mean_terms.total));
}

TEST(Trainer, BlackoutStillActs) {
  TrainConfig c = small_config("pendulum_swingup");
  c.mask_p_train = 1.0;
  Trainer tr(c);
  const RolloutBuffer b = tr.collect_rollout();
  for (double v : b.y_tilde) EXPECT_EQ(v, 0.0);
  for (double m : b.mask) EXPECT_EQ(m, 0.0);
  for (double u : b.u_raw) EXPECT_TRUE(std::isfinite(u));
}

TEST(Trainer, BufferBoundsAndRatioIdentity) {
  for (Arch arch : {Arch::kGru, Arch::kCtrnn}) {
    TrainConfig c = small_config("pendulum_swingup");
    c.arch = arch;
    Trainer tr(c);
    RolloutBuffer b = tr.collect_rollout();
    for (double v : b.y_tilde) EXPECT_LE(std::abs(v), 10.0);
    for (double v : b.reward_scaled) EXPECT_LE(std::abs(v), 10.0);
    for (double v : b.logp_old) EXPECT_TRUE(std::isfinite(v));
    compute_gae(b, c.gamma, c.gae_lambda);
    const UpdateStats u = tr.ppo_update(b);
    EXPECT_LT(u.first_pass_max_ratio_deviation, 1e-12) << arch_name(arch);
    EXPECT_EQ(u.num_updates, c.ppo_epochs * c.num_minibatches);
  }
}

TEST(Trainer, HiddenStateResetsAtEpisodeEnd) {
  TrainConfig c = small_config();
  c.num_envs = 2;
  c.num_minibatches = 1;
  c.unroll = 500;  // one full double-integrator episode per chunk
  c.total_steps = 1000;
  Trainer tr(c);
  tr.collect_rollout();
  const RolloutBuffer b = tr.collect_rollout();
  for (int j = 0; j < b.B; ++j) {
    for (int i = 0; i < b.d_h; ++i) EXPECT_EQ(b.h_chunk_start[j * b.d_h + i], 0.0);
  }
}

TEST(Trainer, OneIterationWhenTotalIsOneChunk) {
  TrainConfig c = small_config();
  c.total_steps = c.steps_per_iteration();
  const std::vector<MetricsRow> rows = train(c);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].env_steps, c.steps_per_iteration());
  EXPECT_DOUBLE_EQ(rows[0].lr, c.lr);
}

TEST(Trainer, LearningRateAnnealsLinearly) {
  TrainConfig c = small_config();
  c.total_steps = c.steps_per_iteration() * 4;
  const std::vector<MetricsRow> rows = train(c);
  ASSERT_EQ(rows.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(rows[i].lr, c.lr * (1.0 - i / 4.0), 1e-18);
  for (const MetricsRow& r : rows) EXPECT_LE(r.grad_norm, 1e300);
}

TEST(Trainer, SameSeedIsBitwiseReproducible) {
  TrainConfig c = small_config("pendulum_swingup");
  auto run = [&] {
    Trainer tr(c);
    std::vector<double> trace;
    while (!tr.finished()) {
      const MetricsRow r = tr.iterate();
      for (double v : {r.loss_actor, r.loss_critic, r.loss_costate, r.grad_norm, r.mask_rate}) trace.push_back(v);
    }
    for (const auto& [name, t] : tr.params().named()) trace.insert(trace.end(), t->data.begin(), t->data.end());
    return trace;
  };
  EXPECT_EQ(run(), run());
  TrainConfig other = c;
  other.seed = 4;
  Trainer a(c), b(other);
  EXPECT_NE(a.collect_rollout().u_raw, b.collect_rollout().u_raw);
}

TEST(Trainer, MaskRateTracksProbability) {
  TrainConfig c = small_config("pendulum_swingup");
  c.num_envs = 8;
  c.unroll = 64;
  c.num_minibatches = 1;
  c.total_steps = 8 * 64;
  c.mask_p_train = 0.5;
  Trainer tr(c);
  const MetricsRow r = tr.iterate();
  const double sd = std::sqrt(0.25 / (8 * 64));
  EXPECT_NEAR(r.mask_rate, 0.5, 4 * sd);
}

TEST(Trainer, EvaluatePolicyIsDeterministic) {
  TrainConfig c = small_config("pendulum_swingup");
  Trainer tr(c);
  EvalOptions o;
  o.episodes = 3;
  o.mask_p = 0.5;
  const auto a = evaluate_policy(tr.params(), tr.obs_stats(), tr.env(), o);
  const auto b = evaluate_policy(tr.params(), tr.obs_stats(), tr.env(), o);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 3u);
  o.random_policy = true;
  for (double r : evaluate_policy(tr.params(), tr.obs_stats(), tr.env(), o)) EXPECT_LT(r, 0.0);
}

}  // namespace
}  // namespace costate
