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

#include "costate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace costate {

namespace {

constexpr double kNormEps = 1e-8;
constexpr double kObsClip = 10.0;
constexpr double kRewardClip = 10.0;
constexpr double kCosineEps = 1e-8;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;

Tensor column_block(const std::vector<double>& src, int T_index, int B, int dim,
                    const std::vector<int>& envs) {
  const std::size_t n = envs.size();
  Tensor out(Shape::matrix(dim, n));
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t base = (static_cast<std::size_t>(T_index) * B + envs[j]) * dim;
    for (int i = 0; i < dim; ++i) out.data[i * n + j] = src[base + i];
  }
  return out;
}

Tensor from_mat(const Mat& m) {
  Tensor t(Shape::matrix(m.rows(), m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) t(i, j) = m(i, j);
  }
  return t;
}

Var add_const(Tape& tape, Var x, double c) { return tape.add(x, tape.constant(Tensor::scalar(c))); }
Var scale_const(Tape& tape, Var x, double c) { return tape.scale(x, tape.constant(Tensor::scalar(c))); }

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "': " + why);
  };
  if (env.empty()) fail("env", "environment name is required");
  if (num_envs < 1) fail("num_envs", "must be >= 1");
  if (unroll < 1) fail("unroll", "must be >= 1");
  if (total_steps < steps_per_iteration()) fail("total_steps", "must be >= num_envs * unroll");
  if (!(lr >= 0)) fail("lr", "must be >= 0");
  if (!(adam_eps > 0)) fail("adam_eps", "must be > 0");
  if (!(max_grad_norm > 0)) fail("max_grad_norm", "must be > 0");
  if (!(gamma > 0 && gamma < 1)) fail("gamma", "must lie in (0, 1)");
  if (!(gae_lambda >= 0 && gae_lambda <= 1)) fail("gae_lambda", "must lie in [0, 1]");
  if (!(clip_eps > 0)) fail("clip_eps", "must be > 0");
  if (ppo_epochs < 1) fail("ppo_epochs", "must be >= 1");
  if (num_minibatches < 1 || num_envs % num_minibatches != 0) {
    fail("num_minibatches", "must divide num_envs");
  }
  if (!(mask_p_train >= 0 && mask_p_train <= 1)) fail("mask_p_train", "must lie in [0, 1]");
  if (d_h < 1) fail("d_h", "must be >= 1");
  if (!(obs_noise >= 0)) fail("obs_noise", "must be >= 0");
}

long TrainConfig::num_iterations() const { return total_steps / steps_per_iteration(); }

// ---------------------------------------------------------------- statistics

RunningStats::RunningStats(int dim) : mean_(Vec::Zero(dim)), var_(Vec::Ones(dim)) {}

void RunningStats::update(const Mat& batch) {
  const double n = static_cast<double>(batch.cols());
  if (n == 0) return;
  const Vec batch_mean = batch.rowwise().mean();
  const Vec batch_var = (batch.colwise() - batch_mean).array().square().rowwise().mean();
  const Vec delta = batch_mean - mean_;
  const double total = count_ + n;
  mean_ += delta * (n / total);
  const Vec m2 = var_ * count_ + batch_var * n + delta.array().square().matrix() * (count_ * n / total);
  var_ = m2 / total;
  count_ = total;
}

void RunningStats::update(const Vec& y) { update(Mat(y)); }

Vec RunningStats::normalize(const Vec& y) const {
  Vec out = (y - mean_).array() / (var_.array() + kNormEps).sqrt();
  return out.cwiseMax(-kObsClip).cwiseMin(kObsClip);
}

void RunningStats::restore(double count, Vec mean, Vec var) {
  count_ = count;
  mean_ = std::move(mean);
  var_ = std::move(var);
}

Vec normalize_obs(RunningStats& stats, const Vec& y_raw) {
  stats.update(y_raw);
  return stats.normalize(y_raw);
}

ReturnScaler::ReturnScaler(int num_envs, double gamma)
    : gamma_(gamma), returns_(num_envs, 0.0), stats_(1) {}

std::vector<double> ReturnScaler::scale(const std::vector<double>& rewards,
                                        const std::vector<bool>& dones) {
  const std::size_t n = rewards.size();
  Mat batch(1, n);
  for (std::size_t i = 0; i < n; ++i) {
    returns_[i] = gamma_ * returns_[i] + rewards[i];
    batch(0, i) = returns_[i];
  }
  stats_.update(batch);
  const double denom = std::sqrt(stats_.var()[0] + kNormEps);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::clamp(rewards[i] / denom, -kRewardClip, kRewardClip);
    if (dones[i]) returns_[i] = 0.0;
  }
  return out;
}

void ReturnScaler::restore(RunningStats stats, std::vector<double> returns) {
  stats_ = std::move(stats);
  returns_ = std::move(returns);
}

// ---------------------------------------------------------------- buffer / GAE

RolloutBuffer::RolloutBuffer(int T_, int B_, int d_y_, int d_h_, int d_u_)
    : T(T_), B(B_), d_y(d_y_), d_h(d_h_), d_u(d_u_) {
  const std::size_t tb = static_cast<std::size_t>(T) * B;
  y_raw.assign(tb * d_y, 0.0);
  y_norm.assign(tb * d_y, 0.0);
  y_tilde.assign(tb * d_y, 0.0);
  y_enc.assign(tb * d_h, 0.0);
  h_pre.assign(tb * d_h, 0.0);
  h_post.assign(tb * d_h, 0.0);
  u_raw.assign(tb * d_u, 0.0);
  mask.assign(tb, 0.0);
  logp_old.assign(tb, 0.0);
  reward_raw.assign(tb, 0.0);
  reward_scaled.assign(tb, 0.0);
  value.assign(tb, 0.0);
  done.assign(tb, 0.0);
  costate_target.assign(tb * d_h, 0.0);
  h_chunk_start.assign(static_cast<std::size_t>(B) * d_h, 0.0);
  bootstrap_value.assign(B, 0.0);
}

GaeResult compute_gae(int T, int B, const std::vector<double>& rewards,
                      const std::vector<double>& values, const std::vector<double>& dones,
                      const std::vector<double>& bootstrap, double gamma, double lambda) {
  GaeResult out;
  out.advantage.assign(static_cast<std::size_t>(T) * B, 0.0);
  out.returns.assign(static_cast<std::size_t>(T) * B, 0.0);
  for (int b = 0; b < B; ++b) {
    double next_value = bootstrap[b];
    double next_adv = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      const std::size_t i = static_cast<std::size_t>(t) * B + b;
      const double nonterminal = 1.0 - dones[i];
      const double delta = rewards[i] + gamma * next_value * nonterminal - values[i];
      const double adv = delta + gamma * lambda * nonterminal * next_adv;
      out.advantage[i] = adv;
      out.returns[i] = adv + values[i];
      next_value = values[i];
      next_adv = adv;
    }
  }
  return out;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda) {
  GaeResult r = compute_gae(buffer.T, buffer.B, buffer.reward_scaled, buffer.value, buffer.done,
                            buffer.bootstrap_value, gamma, lambda);
  buffer.advantage = std::move(r.advantage);
  buffer.return_target = std::move(r.returns);
}

// ---------------------------------------------------------------- co-state

Tensor costate_targets(const PolicyParams& params, const Tensor& enc_batch, const Tensor& h_batch) {
  Tape tape;
  PolicyGraph graph(tape, params, enc_batch.shape.cols());
  const Var enc = tape.input(enc_batch);
  const Var h = tape.constant(h_batch);
  const Var total = tape.sum(graph.critic_value(enc, h));
  return tape.grad_wrt(total, enc);
}

Var costate_loss(Tape& tape, Var h, const Tensor& targets) {
  const Tensor& hv = tape.value(h);
  if (hv.shape != targets.shape || hv.shape.rank != 2) {
    throw std::invalid_argument("costate_loss: h " + hv.shape.to_string() + " vs targets " +
                                targets.shape.to_string());
  }
  const std::size_t rows = targets.shape.dims[0], n = targets.shape.dims[1];
  Tensor inv_target_norm(Shape::vector(n));
  for (std::size_t j = 0; j < n; ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < rows; ++i) sq += targets(i, j) * targets(i, j);
    inv_target_norm[j] = 1.0 / (std::sqrt(sq) + kCosineEps);
  }
  const Var dots = tape.dot(h, tape.constant(targets), Reduce::kColumns);
  const Var h_norm = tape.l2norm(h, Reduce::kColumns);
  const Var eps = tape.constant(Tensor(Shape::vector(n), kCosineEps));
  const Var inv_h_norm = tape.exp(scale_const(tape, tape.log(tape.add(h_norm, eps)), -1.0));
  const Var cosine = tape.mul(tape.mul(dots, inv_h_norm), tape.constant(inv_target_norm));
  return tape.sub(tape.constant(Tensor::scalar(1.0)), tape.mean(cosine));
}

// ---------------------------------------------------------------- optimizer

AdamState AdamState::zeros_like(const PolicyParams& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

PolicyParams adam_step(AdamState& state, const PolicyParams& grads, double lr, double eps) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  PolicyParams delta = grads.zeros_like();
  auto g = grads.named();
  auto m = state.m.named();
  auto v = state.v.named();
  auto d = delta.named();
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& gt = g[k].second->data;
    auto& mt = m[k].second->data;
    auto& vt = v[k].second->data;
    auto& dt = d[k].second->data;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      mt[i] = kAdamBeta1 * mt[i] + (1.0 - kAdamBeta1) * gt[i];
      vt[i] = kAdamBeta2 * vt[i] + (1.0 - kAdamBeta2) * gt[i] * gt[i];
      const double m_hat = mt[i] / bc1;
      const double v_hat = vt[i] / bc2;
      dt[i] = -lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
  return delta;
}

void apply_delta(PolicyParams& params, const PolicyParams& delta) {
  auto p = params.named();
  auto d = delta.named();
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& pt = p[k].second->data;
    const auto& dt = d[k].second->data;
    for (std::size_t i = 0; i < pt.size(); ++i) pt[i] += dt[i];
  }
}

double global_norm(const PolicyParams& grads) {
  double sq = 0.0;
  for (const auto& [name, t] : grads.named()) {
    for (double v : t->data) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_by_global_norm(PolicyParams& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, t] : grads.named()) {
      for (double& v : t->data) v *= s;
    }
  }
  return norm;
}

// ---------------------------------------------------------------- loss

Segment make_segment(const RolloutBuffer& buffer, const std::vector<int>& envs) {
  if (!buffer.has_advantages()) throw std::logic_error("make_segment: advantages not computed");
  Segment s;
  s.T = buffer.T;
  s.n = static_cast<int>(envs.size());
  s.d_y = buffer.d_y;
  s.d_h = buffer.d_h;
  s.d_u = buffer.d_u;
  for (int t = 0; t < buffer.T; ++t) {
    s.y_tilde.push_back(column_block(buffer.y_tilde, t, buffer.B, buffer.d_y, envs));
    s.u_raw.push_back(column_block(buffer.u_raw, t, buffer.B, buffer.d_u, envs));
    s.costate_target.push_back(column_block(buffer.costate_target, t, buffer.B, buffer.d_h, envs));
    auto pick = [&](const std::vector<double>& src) {
      std::vector<double> out(envs.size());
      for (std::size_t j = 0; j < envs.size(); ++j) out[j] = src[buffer.idx(t, envs[j])];
      return out;
    };
    s.logp_old.push_back(pick(buffer.logp_old));
    s.value_old.push_back(pick(buffer.value));
    s.advantage.push_back(pick(buffer.advantage));
    s.return_target.push_back(pick(buffer.return_target));
    s.done.push_back(pick(buffer.done));
  }
  // h_chunk_start is [b][d_h], i.e. a single time slice.
  s.h_start = column_block(buffer.h_chunk_start, 0, 1, buffer.d_h, envs);
  return s;
}

LossEvaluation evaluate_loss(const PolicyParams& params, const Segment& seg,
                             const LossCoefficients& coefs, bool want_grads) {
  const int T = seg.T;
  const int n = seg.n;
  const double count = static_cast<double>(T) * n;

  // Minibatch-level advantage normalization (population std).
  double adv_mean = 0.0;
  for (const auto& row : seg.advantage) for (double a : row) adv_mean += a;
  adv_mean /= count;
  double adv_var = 0.0;
  for (const auto& row : seg.advantage) for (double a : row) adv_var += (a - adv_mean) * (a - adv_mean);
  const double adv_std = std::sqrt(adv_var / count);

  Tape tape;
  tape.reserve(static_cast<std::size_t>(T) * 96 + 64);
  PolicyGraph graph(tape, params, static_cast<std::size_t>(n));
  const char* term = "forward";
  LossEvaluation out;
  try {
    Var h = tape.constant(seg.h_start);
    std::optional<Var> actor_sum, critic_sum, costate_sum;
    double actor_const = 0.0, critic_const = 0.0, max_dev = 0.0;
    auto accumulate = [&](std::optional<Var>& acc, Var v) { acc = acc ? tape.add(*acc, v) : v; };

    for (int t = 0; t < T; ++t) {
      term = "forward";
      const Var enc = graph.encode(tape.constant(seg.y_tilde[t]));
      h = graph.cell_step(enc, h);
      const Var mu = graph.actor_mean(h);
      const Var value = graph.critic_value(enc, h);

      term = "actor";
      const Var logp = graph.log_prob(mu, tape.constant(seg.u_raw[t]));
      const Var ratio = tape.exp(tape.sub(logp, tape.constant(Tensor::vector(seg.logp_old[t]))));
      const Tensor& rho = tape.value(ratio);
      Tensor coef(Shape::vector(n));
      for (int j = 0; j < n; ++j) {
        const double a = (seg.advantage[t][j] - adv_mean) / (adv_std + kNormEps);
        const double unclipped = rho[j] * a;
        const double clipped = std::clamp(rho[j], 1.0 - coefs.clip_eps, 1.0 + coefs.clip_eps) * a;
        max_dev = std::max(max_dev, std::abs(rho[j] - 1.0));
        // min(unclipped, clipped): only the unclipped branch depends on rho.
        if (unclipped <= clipped) {
          coef[j] = a;
        } else {
          actor_const += clipped;
        }
      }
      accumulate(actor_sum, tape.dot(ratio, tape.constant(std::move(coef))));

      term = "critic";
      const Tensor& v = tape.value(value);
      Tensor vmask(Shape::vector(n));
      for (int j = 0; j < n; ++j) {
        const double ret = seg.return_target[t][j];
        const double v_old = seg.value_old[t][j];
        const double v_clipped = v_old + std::clamp(v[j] - v_old, -coefs.clip_eps, coefs.clip_eps);
        const double l_unclipped = (v[j] - ret) * (v[j] - ret);
        const double l_clipped = (v_clipped - ret) * (v_clipped - ret);
        if (l_unclipped >= l_clipped) {
          vmask[j] = 1.0;
        } else {
          critic_const += l_clipped;
        }
      }
      const Var err = tape.sub(value, tape.constant(Tensor::vector(seg.return_target[t])));
      accumulate(critic_sum, tape.dot(tape.mul(err, err), tape.constant(std::move(vmask))));

      term = "costate";
      accumulate(costate_sum, costate_loss(tape, h, seg.costate_target[t]));

      bool any_done = false;
      for (double d : seg.done[t]) any_done = any_done || d > 0.5;
      if (any_done && t + 1 < T) {
        Tensor keep(Shape::matrix(seg.d_h, n), 1.0);
        for (int j = 0; j < n; ++j) {
          if (seg.done[t][j] > 0.5) {
            for (int i = 0; i < seg.d_h; ++i) keep(i, j) = 0.0;
          }
        }
        h = tape.mul(h, tape.constant(std::move(keep)));
      }
    }

    term = "actor";
    const Var l_actor = add_const(tape, scale_const(tape, *actor_sum, -1.0 / count), -actor_const / count);
    term = "critic";
    const Var l_critic = add_const(tape, scale_const(tape, *critic_sum, 1.0 / count), critic_const / count);
    term = "entropy";
    const Var l_entropy = graph.entropy();
    term = "costate";
    const Var l_costate = scale_const(tape, *costate_sum, 1.0 / T);
    term = "total";
    Var total = tape.add(l_actor, scale_const(tape, l_critic, coefs.c_value));
    total = tape.sub(total, scale_const(tape, l_entropy, coefs.c_entropy));
    total = tape.add(total, scale_const(tape, l_costate, coefs.c_costate));

    out.terms.actor = tape.value(l_actor).item();
    out.terms.critic = tape.value(l_critic).item();
    out.terms.entropy = tape.value(l_entropy).item();
    out.terms.costate = tape.value(l_costate).item();
    out.terms.total = tape.value(total).item();
    out.terms.max_ratio_deviation = max_dev;
    if (want_grads) {
      term = "backward";
      tape.backward(total);
      out.grads = graph.gradients();
    }
  } catch (const std::domain_error& e) {
    throw std::runtime_error(std::string("non-finite loss term '") + term + "': " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
  config_.validate();
  env_ = make_env(config_.env, config_.obs_noise);
  env_.validate();
  const PolicyDims dims{env_.d_y, config_.d_h, env_.d_u};
  params_ = init_params(config_.seed, dims, config_.arch);
  adam_ = AdamState::zeros_like(params_);
  obs_stats_ = RunningStats(env_.d_y);
  return_scaler_ = ReturnScaler(config_.num_envs, config_.gamma);
  rng_.seed(config_.seed * 2654435761ULL + 17);
  mask_rng_.seed(config_.seed * 2654435761ULL + 29);
  Rng env_seeder(config_.seed * 2654435761ULL + 41);
  for (int b = 0; b < config_.num_envs; ++b) envs_.push_back(reset(env_, env_seeder()));
  hidden_ = Tensor::zeros(Shape::matrix(config_.d_h, config_.num_envs));
  episode_return_.assign(config_.num_envs, 0.0);
  prepare_observations();
}

double Trainer::current_lr() const {
  const double frac = 1.0 - static_cast<double>(env_steps_) / static_cast<double>(config_.total_steps);
  return config_.lr * std::max(0.0, frac);
}

void Trainer::prepare_observations() {
  const int B = config_.num_envs;
  const int d_y = env_.d_y;
  pending_.y_raw.resize(d_y, B);
  pending_.y_norm.resize(d_y, B);
  pending_.y_tilde.resize(d_y, B);
  pending_.kept.assign(B, true);
  for (int b = 0; b < B; ++b) pending_.y_raw.col(b) = observe(env_, envs_[b]);
  obs_stats_.update(pending_.y_raw);
  const MaskSpec mask{config_.mask_p_train};
  for (int b = 0; b < B; ++b) {
    const Vec y = pending_.y_raw.col(b);
    pending_.y_norm.col(b) = obs_stats_.normalize(y);
    if (!config_.mask_before_norm) {
      const MaskedObservation m = apply_mask(pending_.y_norm.col(b), mask, mask_rng_);
      pending_.y_tilde.col(b) = m.y;
      pending_.kept[b] = m.kept;
    } else {
      const MaskedObservation m = apply_mask(y, mask, mask_rng_);
      pending_.y_tilde.col(b) = obs_stats_.normalize(m.y);
      pending_.kept[b] = m.kept;
    }
  }
}

RolloutBuffer Trainer::collect_rollout() {
  const int T = config_.unroll;
  const int B = config_.num_envs;
  const int d_y = env_.d_y, d_h = config_.d_h, d_u = env_.d_u;
  RolloutBuffer buf(T, B, d_y, d_h, d_u);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < d_h; ++i) buf.h_chunk_start[b * d_h + i] = hidden_(i, b);
  }

  std::vector<double> rewards(B);
  std::vector<bool> dones(B);
  for (int t = 0; t < T; ++t) {
    Tape tape;
    PolicyGraph graph(tape, params_, B);
    const Var enc = graph.encode(tape.constant(from_mat(pending_.y_tilde)));
    const Var h = graph.cell_step(enc, tape.constant(hidden_));
    const Var mu = graph.actor_mean(h);
    const Var value = graph.critic_value(enc, h);
    const ActionSample sample = sample_action(params_, tape.value(mu), rng_);
    const Tensor& enc_v = tape.value(enc);
    const Tensor& h_v = tape.value(h);
    const Tensor& value_v = tape.value(value);

    for (int b = 0; b < B; ++b) {
      Vec u(d_u);
      for (int i = 0; i < d_u; ++i) u[i] = sample.u_raw(i, b);
      const StepResult r = step(env_, envs_[b], u);
      rewards[b] = r.reward;
      dones[b] = r.done;
    }
    const std::vector<double> scaled = return_scaler_.scale(rewards, dones);

    for (int b = 0; b < B; ++b) {
      const std::size_t k = buf.idx(t, b);
      for (int i = 0; i < d_y; ++i) {
        buf.y_raw[k * d_y + i] = pending_.y_raw(i, b);
        buf.y_norm[k * d_y + i] = pending_.y_norm(i, b);
        buf.y_tilde[k * d_y + i] = pending_.y_tilde(i, b);
      }
      for (int i = 0; i < d_h; ++i) {
        buf.y_enc[k * d_h + i] = enc_v(i, b);
        buf.h_pre[k * d_h + i] = hidden_(i, b);
        buf.h_post[k * d_h + i] = h_v(i, b);
      }
      for (int i = 0; i < d_u; ++i) buf.u_raw[k * d_u + i] = sample.u_raw(i, b);
      buf.mask[k] = pending_.kept[b] ? 1.0 : 0.0;
      buf.logp_old[k] = sample.logp[b];
      buf.reward_raw[k] = rewards[b];
      buf.reward_scaled[k] = scaled[b];
      buf.value[k] = value_v[b];
      buf.done[k] = dones[b] ? 1.0 : 0.0;
    }

    hidden_ = h_v;
    for (int b = 0; b < B; ++b) {
      episode_return_[b] += rewards[b];
      if (dones[b]) {
        for (int i = 0; i < d_h; ++i) hidden_(i, b) = 0.0;
        recent_returns_.push_back(episode_return_[b]);
        if (static_cast<int>(recent_returns_.size()) > B) {
          recent_returns_.erase(recent_returns_.begin());
        }
        ++completed_in_iteration_;
        episode_return_[b] = 0.0;
        reset(env_, envs_[b]);
      }
    }
    env_steps_ += B;
    prepare_observations();
  }

  {
    Tape tape;
    PolicyGraph graph(tape, params_, B);
    const Var enc = graph.encode(tape.constant(from_mat(pending_.y_tilde)));
    const Var h = graph.cell_step(enc, tape.constant(hidden_));
    const Tensor& v = tape.value(graph.critic_value(enc, h));
    std::copy(v.data.begin(), v.data.end(), buf.bootstrap_value.begin());
  }

  // Co-state targets for every (t, b) from the collection-time critic.
  const std::size_t tb = static_cast<std::size_t>(T) * B;
  Tensor enc_all(Shape::matrix(d_h, tb)), h_all(Shape::matrix(d_h, tb));
  for (std::size_t k = 0; k < tb; ++k) {
    for (int i = 0; i < d_h; ++i) {
      enc_all(i, k) = buf.y_enc[k * d_h + i];
      h_all(i, k) = buf.h_post[k * d_h + i];
    }
  }
  const Tensor targets = costate_targets(params_, enc_all, h_all);
  for (std::size_t k = 0; k < tb; ++k) {
    for (int i = 0; i < d_h; ++i) buf.costate_target[k * d_h + i] = targets(i, k);
  }
  return buf;
}

UpdateStats Trainer::ppo_update(const RolloutBuffer& buffer) {
  if (!buffer.has_advantages()) throw std::logic_error("ppo_update: compute_gae first");
  const int B = buffer.B;
  const int per_mb = B / config_.num_minibatches;
  const LossCoefficients coefs{config_.clip_eps, config_.c_value, config_.c_entropy, config_.c_costate};
  const double lr = current_lr_override_ ? *current_lr_override_ : current_lr();
  UpdateStats stats;
  std::vector<int> order(B);
  for (int epoch = 0; epoch < config_.ppo_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    for (int mb = 0; mb < config_.num_minibatches; ++mb) {
      std::vector<int> envs(order.begin() + mb * per_mb, order.begin() + (mb + 1) * per_mb);
      const Segment seg = make_segment(buffer, envs);
      LossEvaluation eval = evaluate_loss(params_, seg, coefs, true);
      if (epoch == 0 && mb == 0) stats.first_pass_max_ratio_deviation = eval.terms.max_ratio_deviation;
      PolicyParams& grads = *eval.grads;
      const double norm = clip_by_global_norm(grads, config_.max_grad_norm);
      apply_delta(params_, adam_step(adam_, grads, lr, config_.adam_eps));
      stats.mean_terms.total += eval.terms.total;
      stats.mean_terms.actor += eval.terms.actor;
      stats.mean_terms.critic += eval.terms.critic;
      stats.mean_terms.entropy += eval.terms.entropy;
      stats.mean_terms.costate += eval.terms.costate;
      stats.mean_grad_norm += norm;
      ++stats.num_updates;
    }
  }
  const double k = static_cast<double>(stats.num_updates);
  stats.mean_terms.total /= k;
  stats.mean_terms.actor /= k;
  stats.mean_terms.critic /= k;
  stats.mean_terms.entropy /= k;
  stats.mean_terms.costate /= k;
  stats.mean_grad_norm /= k;
  return stats;
}

MetricsRow Trainer::iterate() {
  if (finished()) throw std::logic_error("iterate: training already finished");
  const double lr = current_lr();
  current_lr_override_ = lr;
  completed_in_iteration_ = 0;
  RolloutBuffer buf = collect_rollout();
  compute_gae(buf, config_.gamma, config_.gae_lambda);
  UpdateStats stats;
  try {
    stats = ppo_update(buf);
  } catch (const std::exception& e) {
    current_lr_override_.reset();
    throw std::runtime_error("iteration " + std::to_string(iteration_ + 1) + ": " + e.what());
  }
  current_lr_override_.reset();
  ++iteration_;

  MetricsRow row;
  row.iteration = iteration_;
  row.env_steps = env_steps_;
  if (recent_returns_.empty()) {
    row.mean_return = std::numeric_limits<double>::quiet_NaN();
    row.std_return = std::numeric_limits<double>::quiet_NaN();
  } else {
    double mean = 0.0;
    for (double r : recent_returns_) mean += r;
    mean /= static_cast<double>(recent_returns_.size());
    double var = 0.0;
    for (double r : recent_returns_) var += (r - mean) * (r - mean);
    row.mean_return = mean;
    row.std_return = std::sqrt(var / static_cast<double>(recent_returns_.size()));
  }
  row.loss_actor = stats.mean_terms.actor;
  row.loss_critic = stats.mean_terms.critic;
  row.loss_entropy = stats.mean_terms.entropy;
  row.loss_costate = stats.mean_terms.costate;
  row.grad_norm = stats.mean_grad_norm;
  row.lr = lr;
  double kept = 0.0;
  for (double m : buf.mask) kept += m;
  row.mask_rate = 1.0 - kept / static_cast<double>(buf.mask.size());
  return row;
}

TrainerSnapshot Trainer::snapshot() const {
  TrainerSnapshot s;
  s.env = config_.env;
  s.obs_noise = config_.obs_noise;
  s.mask_before_norm = config_.mask_before_norm;
  s.params = params_;
  s.obs_stats = obs_stats_;
  s.return_stats = return_scaler_.stats();
  s.running_returns = return_scaler_.returns();
  s.iteration = iteration_;
  s.env_steps = env_steps_;
  std::ostringstream os;
  os << rng_;
  s.rng_state = os.str();
  return s;
}

std::vector<MetricsRow> train(const TrainConfig& config,
                              const std::function<void(const MetricsRow&, const Trainer&)>& on_iteration) {
  Trainer trainer(config);
  std::vector<MetricsRow> rows;
  while (!trainer.finished()) {
    rows.push_back(trainer.iterate());
    if (on_iteration) on_iteration(rows.back(), trainer);
  }
  return rows;
}

// ---------------------------------------------------------------- evaluation

std::vector<double> evaluate_policy(const PolicyParams& params, const RunningStats& obs_stats,
                                    const EnvSpec& env, const EvalOptions& options,
                                    bool mask_before_norm) {
  if (options.episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
  if (params.dims.d_y != env.d_y || params.dims.d_u != env.d_u) {
    std::ostringstream os;
    os << "evaluate_policy: policy dims (d_y=" << params.dims.d_y << ", d_u=" << params.dims.d_u
       << ") do not match env '" << env.name << "' (d_y=" << env.d_y << ", d_u=" << env.d_u << ")";
    throw std::invalid_argument(os.str());
  }
  const int n = options.episodes;
  const int d_h = params.dims.d_h;
  Rng seeder(options.seed * 2654435761ULL + 101);
  std::vector<EnvState> states;
  for (int b = 0; b < n; ++b) states.push_back(reset(env, seeder()));
  Rng mask_rng(seeder());
  Rng action_rng(seeder());
  std::vector<double> returns(n, 0.0);
  std::vector<bool> active(n, true);
  Tensor hidden = Tensor::zeros(Shape::matrix(d_h, n));
  const MaskSpec mask{options.mask_p};

  for (int t = 0; t < env.episode_len; ++t) {
    Tensor y_tilde(Shape::matrix(env.d_y, n));
    for (int b = 0; b < n; ++b) {
      if (!active[b]) continue;
      const Vec y = observe(env, states[b]);
      Vec yt;
      if (!mask_before_norm) {
        yt = apply_mask(obs_stats.normalize(y), mask, mask_rng).y;
      } else {
        yt = obs_stats.normalize(apply_mask(y, mask, mask_rng).y);
      }
      for (int i = 0; i < env.d_y; ++i) y_tilde(i, b) = yt[i];
    }
    Tensor mu_v;
    if (!options.random_policy) {
      Tape tape;
      PolicyGraph graph(tape, params, n);
      const Var enc = graph.encode(tape.constant(y_tilde));
      const Var h = graph.cell_step(enc, tape.constant(hidden));
      mu_v = tape.value(graph.actor_mean(h));
      hidden = tape.value(h);
    }
    bool any = false;
    for (int b = 0; b < n; ++b) {
      if (!active[b]) continue;
      Vec u(env.d_u);
      for (int i = 0; i < env.d_u; ++i) {
        if (options.random_policy) {
          std::uniform_real_distribution<double> uni(env.u_min[i], env.u_max[i]);
          u[i] = uni(action_rng);
        } else {
          u[i] = mu_v(i, b);
        }
      }
      const StepResult r = step(env, states[b], u);
      returns[b] += r.reward;
      if (r.done) active[b] = false;
      any = any || active[b];
    }
    if (!any) break;
  }
  return returns;
}

}  // namespace costate
