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


#include <benchmark/benchmark.h>

#include <vector>

#include "costate/pmp.hpp"
#include "costate/policy.hpp"
#include "costate/trainer.hpp"

namespace {

using namespace costate;

// Forward and reverse sweep of one recurrent step plus actor and critic heads.
void BM_TapeCellStep(benchmark::State& state, Arch arch) {
  const int d_h = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const PolicyParams params = init_params(0, {3, d_h, 1}, arch);
  const Tensor y(Shape::matrix(3, n), 0.3);
  const Tensor h(Shape::matrix(d_h, n), 0.1);
  for (auto _ : state) {
    Tape tape;
    PolicyGraph g(tape, params, n);
    const Var enc = g.encode(tape.constant(y));
    const Var h1 = g.cell_step(enc, tape.constant(h));
    const Var loss = tape.add(tape.sum(g.actor_mean(h1)), tape.sum(g.critic_value(enc, h1)));
    tape.backward(loss);
    benchmark::DoNotOptimize(g.gradients());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK_CAPTURE(BM_TapeCellStep, gru, Arch::kGru)->Args({64, 1})->Args({64, 8})->Args({64, 32});
BENCHMARK_CAPTURE(BM_TapeCellStep, ctrnn, Arch::kCtrnn)->Args({64, 1})->Args({64, 8})->Args({64, 32});

TrainConfig bench_config(const char* env) {
  TrainConfig c;
  c.env = env;
  c.num_envs = 32;
  c.unroll = 64;
  c.total_steps = 2048L * 1000;
  return c;
}

void BM_CollectRollout(benchmark::State& state) {
  Trainer trainer(bench_config("pendulum_swingup"));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.collect_rollout());
  state.SetItemsProcessed(state.iterations() * 2048);
}
BENCHMARK(BM_CollectRollout)->Unit(benchmark::kMillisecond);

void BM_PpoUpdate(benchmark::State& state) {
  Trainer trainer(bench_config("pendulum_swingup"));
  RolloutBuffer buffer = trainer.collect_rollout();
  compute_gae(buffer, 0.99, 0.95);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.ppo_update(buffer));
}
BENCHMARK(BM_PpoUpdate)->Unit(benchmark::kMillisecond);

void BM_Iteration(benchmark::State& state) {
  Trainer trainer(bench_config("pendulum_swingup"));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.iterate());
  state.SetItemsProcessed(state.iterations() * 2048);
}
BENCHMARK(BM_Iteration)->Unit(benchmark::kMillisecond);

void BM_SolveCare(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Mat A = Mat::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) A(i, i + 1) = 1.0;
  Mat B = Mat::Zero(n, 1);
  B(n - 1, 0) = 1.0;
  const Mat Q = Mat::Identity(n, n), R = Mat::Identity(1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(solve_care(A, B, Q, R));
}
BENCHMARK(BM_SolveCare)->Arg(2)->Arg(4)->Arg(6);

void BM_ShootDoubleIntegrator(benchmark::State& state) {
  const HamiltonianSpec spec = lqr_spec(lqr_data::di_A(), lqr_data::di_B(), lqr_data::di_Q(), lqr_data::di_R(),
                                        Mat::Identity(2, 2));
  const Vec x0 = (Vec(2) << 1, 0).finished();
  for (auto _ : state) benchmark::DoNotOptimize(shoot_tpbvp(spec, x0, 5.0, 0.01, Vec::Zero(2)));
}
BENCHMARK(BM_ShootDoubleIntegrator)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
