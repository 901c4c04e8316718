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

// Recurrent actor-critic with a co-state readout.
//
//   enc = tanh(W_enc y + b_enc)                       shared encoder
//   h'  = GRU(enc, h)  or  (1-a)h + a tanh(W_in enc + W_rec h),  a = sigmoid(log_alpha)
//   mu  = W_out h' + b_out                            linear Hamiltonian-minimizing head
//   u   ~ N(mu, diag(exp(log_std))^2)                 state-independent exploration
//   V   = w_c2' tanh(W_c1 [enc; h'] + b_c1) + b_c2     critic
//
// The encoder width equals the hidden width so that h' and the critic's
// gradient with respect to enc live in the same space.
//
// All graph builders are batched: a batch of n samples is a [dim, n] matrix,
// one sample per column.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "costate/envs.hpp"
#include "costate/tape.hpp"

namespace costate {

enum class Arch { kGru, kCtrnn };

std::string_view arch_name(Arch arch);
/// Throws std::invalid_argument for anything but "gru" / "ctrnn".
Arch parse_arch(std::string_view name);

struct PolicyDims {
  int d_y = 0;
  int d_h = 0;
  int d_u = 0;
  bool operator==(const PolicyDims&) const = default;
};

struct PolicyParams {
  Arch arch = Arch::kGru;
  PolicyDims dims;

  Tensor W_enc, b_enc;
  Tensor W_z, U_z, b_z, W_r, U_r, b_r, W_n, U_n, b_n;  // GRU
  Tensor W_in, W_rec, log_alpha;                        // CT-RNN
  Tensor W_out, b_out, log_std;
  Tensor W_c1, b_c1, w_c2, b_c2;

  /// Parameters of the active architecture in a fixed order.
  std::vector<std::pair<std::string_view, Tensor*>> named();
  std::vector<std::pair<std::string_view, const Tensor*>> named() const;
  /// True for the critic head (W_c1, b_c1, w_c2, b_c2).
  static bool is_critic(std::string_view name);

  std::size_t num_scalars() const;
  /// Same architecture and shapes, all entries zero.
  PolicyParams zeros_like() const;
};

/// Orthogonal matrix with W'W = s^2 I (rows >= cols) or WW' = s^2 I.
Tensor orthogonal(std::size_t rows, std::size_t cols, double scale, Rng& rng);

/// Orthogonal weights (scale 1, actor head 0.01), zero biases, log_std = 0,
/// log_alpha = 0. Deterministic in the seed.
PolicyParams init_params(std::uint64_t seed, const PolicyDims& dims, Arch arch);

struct ParamNodes {
  std::vector<Var> ordered;  // same order as PolicyParams::named()
  Var W_enc, b_enc;
  Var W_z, U_z, b_z, W_r, U_r, b_r, W_n, U_n, b_n;
  Var W_in, W_rec, log_alpha;
  Var W_out, b_out, log_std;
  Var W_c1, b_c1, w_c2, b_c2;
};

/// Records the parameters as input nodes of `tape` and exposes the network
/// pieces as graph builders over batches of `batch` columns.
class PolicyGraph {
 public:
  PolicyGraph(Tape& tape, const PolicyParams& params, std::size_t batch);

  Tape& tape() { return tape_; }
  const ParamNodes& nodes() const { return nodes_; }
  const PolicyParams& params() const { return params_; }
  std::size_t batch() const { return batch_; }

  Var encode(Var y);
  Var gru_step(Var enc, Var h);
  Var ctrnn_step(Var enc, Var h);
  Var cell_step(Var enc, Var h) {
    return params_.arch == Arch::kGru ? gru_step(enc, h) : ctrnn_step(enc, h);
  }
  Var actor_mean(Var h);
  Var critic_value(Var enc, Var h);  // [n]
  /// Diagonal-Gaussian log-density of the unclipped actions u, [n].
  Var log_prob(Var mu, Var u);
  Var entropy();

  /// Constant [rows, n] / [n] helpers bound to this graph's batch size.
  Var ones_row_vector();
  Var zeros(std::size_t rows);

  /// Parameter adjoints after tape().backward().
  PolicyParams gradients() const;

 private:
  Var broadcast(Var v, std::optional<Var>& cache);  // [d] -> [d, n]
  Var affine(Var W, Var x, Var b, std::optional<Var>& cache);

  Tape& tape_;
  const PolicyParams& params_;
  std::size_t batch_;
  ParamNodes nodes_;
  std::optional<Var> ones_, b_enc_, b_z_, b_r_, b_n_, b_out_, b_c1_, w_c2_, b_c2_, inv_std_;
};

/// Gaussian sample around mu (one sample per column) and its log-density.
struct ActionSample {
  Tensor u_raw;  // [d_u, n]
  std::vector<double> logp;
};
ActionSample sample_action(const PolicyParams& params, const Tensor& mu, Rng& rng);
/// Closed-form log N(u; mu, exp(log_std)^2) for a single sample.
double log_prob(const PolicyParams& params, const Vec& mu, const Vec& u_raw);
double entropy(const PolicyParams& params);

}  // namespace costate
