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

// Recurrent PPO with a co-state alignment term.
//
// Each iteration collects T steps from B environments, estimates advantages
// with GAE, extracts detached co-state targets grad_enc V(enc, h) from the
// critic, and runs K epochs of minibatch updates on
//
//   L = L_actor + c1 L_critic - c2 H + c3 (1 - mean cos(h, lambda_hat)).
//
// Minibatches are groups of whole environments, so every update re-runs the
// recurrent core over full length-T segments from the stored chunk-start
// hidden state (truncated BPTT at chunk boundaries).

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "costate/envs.hpp"
#include "costate/policy.hpp"

namespace costate {

struct TrainConfig {
  std::string env;
  Arch arch = Arch::kGru;
  int num_envs = 32;
  int unroll = 64;
  long total_steps = 2'000'000;
  double lr = 2.5e-4;
  double adam_eps = 1e-5;
  double max_grad_norm = 0.5;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double c_value = 0.5;
  double c_entropy = 0.01;
  double c_costate = 0.05;
  int ppo_epochs = 4;
  int num_minibatches = 4;
  double mask_p_train = 0.5;
  bool mask_before_norm = false;
  int d_h = 64;
  std::uint64_t seed = 0;
  double obs_noise = 0.01;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  long steps_per_iteration() const { return static_cast<long>(num_envs) * unroll; }
  long num_iterations() const;
};

/// Streaming mean/variance (parallel-merge form), seeded with a tiny
/// pseudo-count at mean 0, variance 1.
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(int dim);

  /// Merge a batch of observations, one per column.
  void update(const Mat& batch);
  void update(const Vec& y);
  /// clip((y - mean) / sqrt(var + 1e-8), -10, 10)
  Vec normalize(const Vec& y) const;

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  const Vec& mean() const { return mean_; }
  const Vec& var() const { return var_; }
  void restore(double count, Vec mean, Vec var);

 private:
  double count_ = 1e-4;
  Vec mean_;
  Vec var_;
};

/// update-then-normalize for a single observation.
Vec normalize_obs(RunningStats& stats, const Vec& y_raw);

/// Divides rewards by the running std of per-environment discounted returns.
class ReturnScaler {
 public:
  ReturnScaler() = default;
  ReturnScaler(int num_envs, double gamma);

  /// R <- gamma R + r (R restarted after a done), stats updated from R,
  /// r_scaled = clip(r / sqrt(Var(R) + 1e-8), -10, 10).
  std::vector<double> scale(const std::vector<double>& rewards, const std::vector<bool>& dones);

  const RunningStats& stats() const { return stats_; }
  const std::vector<double>& returns() const { return returns_; }
  void restore(RunningStats stats, std::vector<double> returns);

 private:
  double gamma_ = 0.99;
  std::vector<double> returns_;
  RunningStats stats_{1};
};

/// Time-major [T x B] storage; per-sample vectors are laid out contiguously
/// as [t][b][dim].
struct RolloutBuffer {
  int T = 0;
  int B = 0;
  int d_y = 0;
  int d_h = 0;
  int d_u = 0;

  std::vector<double> y_raw, y_norm, y_tilde, y_enc, h_pre, h_post, u_raw;
  std::vector<double> mask, logp_old, reward_raw, reward_scaled, value, done;
  std::vector<double> advantage, return_target;  // filled by compute_gae
  std::vector<double> costate_target;            // [t][b][d_h], detached
  std::vector<double> h_chunk_start;             // [b][d_h]
  std::vector<double> bootstrap_value;           // [b], V after the chunk

  RolloutBuffer() = default;
  RolloutBuffer(int T, int B, int d_y, int d_h, int d_u);

  std::size_t idx(int t, int b) const { return static_cast<std::size_t>(t) * B + b; }
  bool has_advantages() const { return !advantage.empty(); }
};

struct GaeResult {
  std::vector<double> advantage;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma V_{t+1}(1 - d_t) - V_t, A_t = delta_t + gamma lambda (1 - d_t) A_{t+1}.
/// Arrays are [T x B] time-major; bootstrap is V after the last step, [B].
GaeResult compute_gae(int T, int B, const std::vector<double>& rewards,
                      const std::vector<double>& values, const std::vector<double>& dones,
                      const std::vector<double>& bootstrap, double gamma, double lambda);
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

/// grad_enc V(enc, h) per column with h held fixed; enc and h are [d_h, n].
Tensor costate_targets(const PolicyParams& params, const Tensor& enc_batch, const Tensor& h_batch);

/// mean_j [1 - h_j . l_j / ((|h_j| + eps)(|l_j| + eps))], eps = 1e-8.
/// Differentiable in h only; `targets` is a [d_h, n] constant.
Var costate_loss(Tape& tape, Var h, const Tensor& targets);

struct AdamState {
  PolicyParams m;
  PolicyParams v;
  long step = 0;
  static AdamState zeros_like(const PolicyParams& params);
};

/// Bias-corrected Adam (beta1 0.9, beta2 0.999). Returns the parameter delta.
PolicyParams adam_step(AdamState& state, const PolicyParams& grads, double lr, double eps);
void apply_delta(PolicyParams& params, const PolicyParams& delta);

double global_norm(const PolicyParams& grads);
/// Rescales grads in place to norm <= max_norm; returns the pre-clip norm.
double clip_by_global_norm(PolicyParams& grads, double max_norm);

/// Minibatch view of a buffer: a subset of environments, full length T.
struct Segment {
  int T = 0;
  int n = 0;
  int d_y = 0, d_h = 0, d_u = 0;
  std::vector<Tensor> y_tilde;         // T x [d_y, n]
  std::vector<Tensor> u_raw;           // T x [d_u, n]
  std::vector<Tensor> costate_target;  // T x [d_h, n]
  std::vector<std::vector<double>> logp_old, value_old, advantage, return_target, done;  // T x n
  Tensor h_start;                      // [d_h, n]
};
Segment make_segment(const RolloutBuffer& buffer, const std::vector<int>& envs);

struct LossCoefficients {
  double clip_eps = 0.2;
  double c_value = 0.5;
  double c_entropy = 0.01;
  double c_costate = 0.05;
};

struct LossTerms {
  double total = 0.0;
  double actor = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
  double costate = 0.0;
  double max_ratio_deviation = 0.0;  // max |rho - 1|
};

struct LossEvaluation {
  LossTerms terms;
  std::optional<PolicyParams> grads;
};

/// Full objective on one segment. Advantages are normalized within the
/// segment. With want_grads the reverse sweep is run and parameter
/// gradients returned. Throws std::runtime_error naming the offending term
/// when a loss is non-finite.
LossEvaluation evaluate_loss(const PolicyParams& params, const Segment& segment,
                             const LossCoefficients& coefs, bool want_grads);

struct MetricsRow {
  long iteration = 0;
  long env_steps = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double loss_actor = 0.0;
  double loss_critic = 0.0;
  double loss_entropy = 0.0;
  double loss_costate = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  double mask_rate = 0.0;
};

struct UpdateStats {
  LossTerms mean_terms;
  double mean_grad_norm = 0.0;
  double first_pass_max_ratio_deviation = 0.0;
  int num_updates = 0;
};

/// Snapshot of everything needed to evaluate or resume a policy.
struct TrainerSnapshot {
  std::string env;
  double obs_noise = 0.01;
  bool mask_before_norm = false;
  PolicyParams params;
  RunningStats obs_stats;
  RunningStats return_stats{1};
  std::vector<double> running_returns;
  long iteration = 0;
  long env_steps = 0;
  std::string rng_state;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const EnvSpec& env() const { return env_; }
  const PolicyParams& params() const { return params_; }
  PolicyParams& mutable_params() { return params_; }
  const RunningStats& obs_stats() const { return obs_stats_; }
  long iteration() const { return iteration_; }
  long env_steps() const { return env_steps_; }
  bool finished() const { return iteration_ >= config_.num_iterations(); }

  /// Runs T steps on every environment and fills the buffer including
  /// co-state targets (but not advantages).
  RolloutBuffer collect_rollout();
  /// K epochs of minibatch updates; advantages must be present.
  UpdateStats ppo_update(const RolloutBuffer& buffer);
  /// collect -> GAE -> update, returns the logged row.
  MetricsRow iterate();

  double current_lr() const;
  TrainerSnapshot snapshot() const;

 private:
  struct PreparedObs {
    Mat y_raw, y_norm, y_tilde;  // [d_y, B]
    std::vector<bool> kept;
  };
  void prepare_observations();

  TrainConfig config_;
  EnvSpec env_;
  PolicyParams params_;
  AdamState adam_;
  RunningStats obs_stats_;
  ReturnScaler return_scaler_;
  std::vector<EnvState> envs_;
  Tensor hidden_;  // [d_h, B]
  Rng rng_;
  Rng mask_rng_;
  PreparedObs pending_;
  std::vector<double> episode_return_;
  std::vector<double> recent_returns_;
  long completed_in_iteration_ = 0;
  std::optional<double> current_lr_override_;
  long iteration_ = 0;
  long env_steps_ = 0;
};

/// Runs the full loop; the callback fires after every iteration.
std::vector<MetricsRow> train(const TrainConfig& config,
                              const std::function<void(const MetricsRow&, const Trainer&)>& on_iteration = {});

struct EvalOptions {
  double mask_p = 0.0;
  int episodes = 10;
  std::uint64_t seed = 0;
  bool random_policy = false;
  double obs_noise = 0.01;
};

/// Greedy (mean-action) episodes with frozen normalization statistics.
/// The random policy draws actions uniformly within the bounds.
std::vector<double> evaluate_policy(const PolicyParams& params, const RunningStats& obs_stats,
                                    const EnvSpec& env, const EvalOptions& options,
                                    bool mask_before_norm = false);

}  // namespace costate
