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

#include "costate/pmp.hpp"
#include "costate/policy.hpp"
#include "objective_fixture.hpp"
#include "test_support.hpp"

namespace costate {
namespace {

using testing::random_tensor;

Mat as_mat(const Tensor& t) {
  Mat m(t.shape.rows(), t.shape.cols());
  for (std::size_t r = 0; r < t.shape.rows(); ++r) {
    for (std::size_t c = 0; c < t.shape.cols(); ++c) m(r, c) = t(r, c);
  }
  return m;
}

Tensor column(const Vec& v) {
  Tensor t(Shape::matrix(v.size(), 1));
  for (int i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

TEST(Policy, ArchNames) {
  EXPECT_EQ(parse_arch("gru"), Arch::kGru);
  EXPECT_EQ(parse_arch("ctrnn"), Arch::kCtrnn);
  EXPECT_EQ(arch_name(Arch::kCtrnn), "ctrnn");
  EXPECT_THROW(parse_arch("lstm"), std::invalid_argument);
}

TEST(Policy, InitIsOrthogonalWithPrescribedScales) {
  for (Arch arch : {Arch::kGru, Arch::kCtrnn}) {
    for (const PolicyDims& dims : {PolicyDims{3, 8, 1}, PolicyDims{5, 4, 2}, PolicyDims{2, 64, 1}}) {
      const PolicyParams p = init_params(9, dims, arch);
      for (const auto& [name, t] : p.named()) {
        if (t->shape.rank != 2) continue;
        const double s = name == std::string_view("W_out") ? 0.01 : 1.0;
        const Mat W = as_mat(*t);
        const Mat G = W.rows() >= W.cols() ? Mat(W.transpose() * W) : Mat(W * W.transpose());
        EXPECT_LT((G - s * s * Mat::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff(), 1e-8) << name;
      }
      const Mat W_out = as_mat(p.W_out);
      for (int r = 0; r < W_out.rows(); ++r) EXPECT_NEAR(W_out.row(r).norm(), 0.01, 1e-8);
      for (double v : p.log_std.data) EXPECT_EQ(v, 0.0);
      for (double v : p.b_enc.data) EXPECT_EQ(v, 0.0);
      for (double v : p.b_out.data) EXPECT_EQ(v, 0.0);
      if (arch == Arch::kCtrnn) {
        EXPECT_EQ(p.log_alpha.item(), 0.0);
      }
      const double wc2 = Eigen::Map<const Vec>(p.w_c2.data.data(), p.w_c2.size()).norm();
      EXPECT_NEAR(wc2, 1.0, 1e-8);
    }
  }
}

TEST(Policy, InitIsDeterministic) {
  const PolicyDims dims{3, 6, 1};
  const PolicyParams a = init_params(4, dims, Arch::kGru);
  const PolicyParams b = init_params(4, dims, Arch::kGru);
  const PolicyParams c = init_params(5, dims, Arch::kGru);
  for (std::size_t k = 0; k < a.named().size(); ++k) {
    EXPECT_EQ(a.named()[k].second->data, b.named()[k].second->data);
  }
  EXPECT_NE(a.W_enc.data, c.W_enc.data);
}

TEST(Policy, EncodeExamples) {
  const PolicyParams p = init_params(1, {3, 5, 1}, Arch::kGru);
  Tape t;
  PolicyGraph g(t, p, 1);
  EXPECT_EQ(t.value(g.encode(t.constant(Tensor::zeros(Shape::matrix(3, 1))))).data, std::vector<double>(5, 0.0));
  std::mt19937_64 rng(2);
  const Tensor e = t.value(g.encode(t.constant(random_tensor(Shape::matrix(3, 1), rng, -10, 10))));
  for (double v : e.data) EXPECT_LT(std::abs(v), 1.0);
}

TEST(Policy, EncodeAndCriticInputGradientsMatchFiniteDifferences) {
  const PolicyParams p = testing::perturbed_params({3, 4, 1}, Arch::kGru, 3);
  std::mt19937_64 rng(6);
  const Tensor y0 = random_tensor(Shape::matrix(3, 1), rng);
  const Tensor h0 = random_tensor(Shape::matrix(4, 1), rng);
  const Tensor enc0 = random_tensor(Shape::matrix(4, 1), rng);
  auto enc_sum = [&](const std::vector<double>& y, Tensor* grad) {
    Tape t;
    PolicyGraph g(t, p, 1);
    const Var yv = t.input(Tensor(y0.shape, y));
    const Var out = t.dot(g.encode(yv), t.constant(Tensor(Shape::matrix(4, 1), std::vector<double>{1, -2, 0.5, 3})));
    if (grad) *grad = t.grad_wrt(out, yv);
    return t.value(out).item();
  };
  Tensor gy;
  enc_sum(y0.data, &gy);
  EXPECT_LT(testing::check_gradient([&](const auto& y) { return enc_sum(y, nullptr); }, y0.data, gy.data, 1e-6, 1e-3,
                                    false)
                .max_rel_error,
            1e-6);

  auto value = [&](const std::vector<double>& e, Tensor* grad) {
    Tape t;
    PolicyGraph g(t, p, 1);
    const Var ev = t.input(Tensor(enc0.shape, e));
    const Var v = t.sum(g.critic_value(ev, t.constant(h0)));
    if (grad) *grad = t.grad_wrt(v, ev);
    return t.value(v).item();
  };
  Tensor ge;
  value(enc0.data, &ge);
  EXPECT_LT(testing::check_gradient([&](const auto& e) { return value(e, nullptr); }, enc0.data, ge.data, 1e-6, 1e-3,
                                    false)
                .max_rel_error,
            1e-6);
}

TEST(Policy, ZeroParameterCellsHalveTheState) {
  for (Arch arch : {Arch::kGru, Arch::kCtrnn}) {
    const PolicyParams p = init_params(0, {2, 3, 1}, arch).zeros_like();
    Tape t;
    PolicyGraph g(t, p, 1);
    const Tensor h = Tensor::matrix(3, 1, {0.8, -0.4, 0.1});
    const Tensor out = t.value(g.cell_step(t.constant(Tensor::matrix(3, 1, {0.3, 0.2, -0.9})), t.constant(h)));
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * h[i]);
  }
}

TEST(Policy, CtrnnPureMemoryLimit) {
  PolicyParams p = init_params(0, {2, 3, 1}, Arch::kCtrnn);
  p.log_alpha = Tensor::scalar(-40.0);
  Tape t;
  PolicyGraph g(t, p, 1);
  const Tensor h = Tensor::matrix(3, 1, {0.8, -0.4, 0.1});
  const Tensor out = t.value(g.ctrnn_step(t.constant(Tensor::matrix(3, 1, {1, 1, 1})), t.constant(h)));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out[i], h[i], 1e-16);
}

TEST(Policy, HiddenStateStaysBounded) {
  std::mt19937_64 rng(12);
  for (Arch arch : {Arch::kGru, Arch::kCtrnn}) {
    for (int rollout = 0; rollout < 1000; ++rollout) {
      PolicyParams p = init_params(rollout, {2, 4, 1}, arch);
      for (auto& [name, t] : p.named()) {
        for (double& v : t->data) v *= 3.0;
      }
      Tape t;
      PolicyGraph g(t, p, 1);
      Var h = t.constant(random_tensor(Shape::matrix(4, 1), rng));
      for (int step = 0; step < 20; ++step) {
        const Var enc = g.encode(t.constant(random_tensor(Shape::matrix(2, 1), rng, -20, 20)));
        h = g.cell_step(enc, h);
        for (double v : t.value(h).data) ASSERT_LE(std::abs(v), 1.0);
      }
    }
  }
}

TEST(Policy, ActorReadoutReproducesQuadraticLaw) {
  const Mat G = lqr_data::di_B();
  const Mat R = lqr_data::di_R();
  PolicyParams p = init_params(0, {2, 2, 1}, Arch::kGru);
  const Mat W = -0.5 * R.inverse() * G.transpose();
  p.W_out = Tensor(Shape::matrix(1, 2), {W(0, 0), W(0, 1)});
  Rng rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec lam = (Vec(2) << normal(rng), normal(rng)).finished();
    Tape t;
    PolicyGraph g(t, p, 1);
    const double mu = t.value(g.actor_mean(t.constant(column(lam))))[0];
    EXPECT_NEAR(mu, readout_quadratic(-0.5 * G.transpose() * lam, R)[0], 1e-12);
  }
  Tape t;
  PolicyGraph g(t, p, 1);
  EXPECT_EQ(t.value(g.actor_mean(t.constant(Tensor::zeros(Shape::matrix(2, 1)))))[0], 0.0);
}

TEST(Policy, InitialActorOutputIsSmall) {
  const PolicyParams p = init_params(3, {3, 16, 2}, Arch::kGru);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor h = random_tensor(Shape::matrix(16, 1), rng);
    Tape t;
    PolicyGraph g(t, p, 1);
    const Tensor mu = t.value(g.actor_mean(t.constant(h)));
    const double hn = Eigen::Map<const Vec>(h.data.data(), 16).norm();
    const double mn = Eigen::Map<const Vec>(mu.data.data(), 2).norm();
    EXPECT_LE(mn, 0.01 * hn * std::sqrt(2.0) + 1e-15);
  }
}

TEST(Policy, GaussianClosedForms) {
  PolicyParams p = init_params(0, {2, 3, 2}, Arch::kGru);
  const Vec mu = (Vec(2) << 0.3, -0.1).finished();
  EXPECT_NEAR(log_prob(p, mu, mu), -std::log(2 * M_PI), 1e-14);
  PolicyParams p1 = init_params(0, {2, 3, 1}, Arch::kGru);
  EXPECT_NEAR(entropy(p1), 1.4189385332046727, 1e-12);
  p.log_std = Tensor::vector({0.2, -0.7});
  EXPECT_NEAR(entropy(p), 2 * 0.5 * std::log(2 * M_PI * M_E) + 0.2 - 0.7, 1e-12);

  // Tape log-density and entropy agree with the closed forms.
  Rng rng(5);
  const ActionSample s = sample_action(p, column(mu), rng);
  Tape t;
  PolicyGraph g(t, p, 1);
  const Var lp = g.log_prob(t.constant(column(mu)), t.constant(s.u_raw));
  const Vec u = (Vec(2) << s.u_raw[0], s.u_raw[1]).finished();
  EXPECT_NEAR(t.value(lp)[0], log_prob(p, mu, u), 1e-12);
  EXPECT_NEAR(s.logp[0], log_prob(p, mu, u), 1e-12);
  EXPECT_NEAR(t.value(g.entropy()).item(), entropy(p), 1e-12);
}

TEST(Policy, DensityIntegratesToOne) {
  PolicyParams p = init_params(0, {2, 3, 1}, Arch::kGru);
  p.log_std = Tensor::vector({-0.4});
  const double sigma = std::exp(-0.4);
  const Vec mu = Vec::Constant(1, 0.7);
  Rng rng(8);
  const double half = 8.0 * sigma;
  std::uniform_real_distribution<double> uni(mu[0] - half, mu[0] + half);
  const int n = 100000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += std::exp(log_prob(p, mu, Vec::Constant(1, uni(rng))));
  EXPECT_NEAR(acc / n * 2 * half, 1.0, 0.02);

  // Sample moments of the exploration noise.
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = sample_action(p, column(mu), rng).u_raw[0] - mu[0];
    m1 += u;
    m2 += u * u;
  }
  EXPECT_NEAR(m1 / n, 0.0, 4 * sigma / std::sqrt(n));
  EXPECT_NEAR(std::sqrt(m2 / n), sigma, 0.02 * sigma);
}

TEST(Policy, CriticExamples) {
  PolicyParams p = init_params(0, {2, 3, 1}, Arch::kGru);
  PolicyParams z = p;
  z.W_c1 = Tensor::zeros(p.W_c1.shape);
  z.w_c2 = Tensor::zeros(p.w_c2.shape);
  z.b_c2 = Tensor::scalar(0.75);
  std::mt19937_64 rng(3);
  const Tensor enc = random_tensor(Shape::matrix(3, 4), rng);
  const Tensor h = random_tensor(Shape::matrix(3, 4), rng);
  {
    Tape t;
    PolicyGraph g(t, z, 4);
    for (double v : t.value(g.critic_value(t.constant(enc), t.constant(h))).data) EXPECT_EQ(v, 0.75);
  }
  PolicyParams hless = testing::perturbed_params({2, 3, 1}, Arch::kGru, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 3; c < 6; ++c) hless.W_c1(r, c) = 0.0;
  }
  Tape t;
  PolicyGraph g(t, hless, 4);
  const Tensor v1 = t.value(g.critic_value(t.constant(enc), t.constant(h)));
  const Tensor v2 = t.value(g.critic_value(t.constant(enc), t.constant(random_tensor(Shape::matrix(3, 4), rng))));
  EXPECT_EQ(v1.data, v2.data);
}

TEST(Policy, BatchedColumnsMatchSingleSamples) {
  const PolicyParams p = testing::perturbed_params({3, 4, 2}, Arch::kGru, 2);
  std::mt19937_64 rng(4);
  const Tensor y = random_tensor(Shape::matrix(3, 5), rng);
  const Tensor h = random_tensor(Shape::matrix(4, 5), rng);
  Tape t;
  PolicyGraph g(t, p, 5);
  const Var enc = g.encode(t.constant(y));
  const Var h1 = g.cell_step(enc, t.constant(h));
  const Tensor mu = t.value(g.actor_mean(h1));
  const Tensor v = t.value(g.critic_value(enc, h1));
  for (std::size_t j = 0; j < 5; ++j) {
    Tensor yj(Shape::matrix(3, 1)), hj(Shape::matrix(4, 1));
    for (std::size_t i = 0; i < 3; ++i) yj[i] = y(i, j);
    for (std::size_t i = 0; i < 4; ++i) hj[i] = h(i, j);
    Tape s;
    PolicyGraph gs(s, p, 1);
    const Var e = gs.encode(s.constant(yj));
    const Var hs = gs.cell_step(e, s.constant(hj));
    const Tensor mus = s.value(gs.actor_mean(hs));
    EXPECT_NEAR(mus[0], mu(0, j), 1e-14);
    EXPECT_NEAR(mus[1], mu(1, j), 1e-14);
    EXPECT_NEAR(s.value(gs.critic_value(e, hs))[0], v[j], 1e-14);
  }
}

TEST(Policy, FullUnrolledObjectiveMatchesFiniteDifferencesGru) {
  const testing::ObjectiveCheck r = testing::check_full_objective(Arch::kGru, 8, 2, 1e-3, 1e-4);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Policy, FullUnrolledObjectiveMatchesFiniteDifferencesCtrnn) {
  const testing::ObjectiveCheck r = testing::check_full_objective(Arch::kCtrnn, 8, 2, 1e-3, 1e-4);
  EXPECT_GT(r.checked, 50u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Policy, ForwardIsBitwiseDeterministic) {
  auto run = [] {
    const PolicyParams p = testing::perturbed_params({3, 4, 2}, Arch::kCtrnn, 8);
    const Segment seg = testing::synthetic_segment(p, 8, 2, 1);
    const LossEvaluation e = evaluate_loss(p, seg, LossCoefficients{}, true);
    return std::make_pair(e.terms.total, e.grads->W_rec.data);
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace costate
