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

#include "costate/policy.hpp"

#include <Eigen/QR>
#include <cmath>
#include <stdexcept>

namespace costate {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;        // ln(2 pi)
constexpr double kHalfLog2PiE = 1.4189385332046727418;   // (1/2) ln(2 pi e)
constexpr double kActorOutScale = 0.01;

Tensor zeros_vec(int n) { return Tensor::zeros(Shape::vector(static_cast<std::size_t>(n))); }

}  // namespace

std::string_view arch_name(Arch arch) { return arch == Arch::kGru ? "gru" : "ctrnn"; }

Arch parse_arch(std::string_view name) {
  if (name == "gru") return Arch::kGru;
  if (name == "ctrnn") return Arch::kCtrnn;
  throw std::invalid_argument("unknown arch '" + std::string(name) + "' (expected gru or ctrnn)");
}

std::vector<std::pair<std::string_view, Tensor*>> PolicyParams::named() {
  std::vector<std::pair<std::string_view, Tensor*>> out = {{"W_enc", &W_enc}, {"b_enc", &b_enc}};
  if (arch == Arch::kGru) {
    out.insert(out.end(), {{"W_z", &W_z}, {"U_z", &U_z}, {"b_z", &b_z},
                           {"W_r", &W_r}, {"U_r", &U_r}, {"b_r", &b_r},
                           {"W_n", &W_n}, {"U_n", &U_n}, {"b_n", &b_n}});
  } else {
    out.insert(out.end(), {{"W_in", &W_in}, {"W_rec", &W_rec}, {"log_alpha", &log_alpha}});
  }
  out.insert(out.end(), {{"W_out", &W_out}, {"b_out", &b_out}, {"log_std", &log_std},
                         {"W_c1", &W_c1}, {"b_c1", &b_c1}, {"w_c2", &w_c2}, {"b_c2", &b_c2}});
  return out;
}

std::vector<std::pair<std::string_view, const Tensor*>> PolicyParams::named() const {
  auto mut = const_cast<PolicyParams*>(this)->named();
  std::vector<std::pair<std::string_view, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

bool PolicyParams::is_critic(std::string_view name) {
  return name == "W_c1" || name == "b_c1" || name == "w_c2" || name == "b_c2";
}

std::size_t PolicyParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

PolicyParams PolicyParams::zeros_like() const {
  PolicyParams z = *this;
  for (auto& [name, t] : z.named()) std::fill(t->data.begin(), t->data.end(), 0.0);
  return z;
}

Tensor orthogonal(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  const std::size_t tall = std::max(rows, cols);
  const std::size_t wide = std::min(rows, cols);
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat G(tall, wide);
  for (Eigen::Index j = 0; j < G.cols(); ++j) {
    for (Eigen::Index i = 0; i < G.rows(); ++i) G(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ() * Mat::Identity(tall, wide);
  const Mat R = qr.matrixQR().topRows(wide).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < Q.cols(); ++j) {
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  }
  if (rows < cols) Q.transposeInPlace();
  Tensor out(Shape::matrix(rows, cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = scale * Q(i, j);
  }
  return out;
}

PolicyParams init_params(std::uint64_t seed, const PolicyDims& dims, Arch arch) {
  if (dims.d_h < 1 || dims.d_y < 1 || dims.d_u < 1) {
    throw std::invalid_argument("init_params: dimensions must be positive");
  }
  Rng rng(seed);
  const std::size_t h = dims.d_h, y = dims.d_y, u = dims.d_u;
  PolicyParams p;
  p.arch = arch;
  p.dims = dims;
  p.W_enc = orthogonal(h, y, 1.0, rng);
  p.b_enc = zeros_vec(dims.d_h);
  if (arch == Arch::kGru) {
    p.W_z = orthogonal(h, h, 1.0, rng);
    p.U_z = orthogonal(h, h, 1.0, rng);
    p.b_z = zeros_vec(dims.d_h);
    p.W_r = orthogonal(h, h, 1.0, rng);
    p.U_r = orthogonal(h, h, 1.0, rng);
    p.b_r = zeros_vec(dims.d_h);
    p.W_n = orthogonal(h, h, 1.0, rng);
    p.U_n = orthogonal(h, h, 1.0, rng);
    p.b_n = zeros_vec(dims.d_h);
  } else {
    p.W_in = orthogonal(h, h, 1.0, rng);
    p.W_rec = orthogonal(h, h, 1.0, rng);
    p.log_alpha = Tensor::scalar(0.0);
  }
  p.W_out = orthogonal(u, h, kActorOutScale, rng);
  p.b_out = zeros_vec(dims.d_u);
  p.log_std = zeros_vec(dims.d_u);
  p.W_c1 = orthogonal(h, 2 * h, 1.0, rng);
  p.b_c1 = zeros_vec(dims.d_h);
  Tensor row = orthogonal(1, h, 1.0, rng);
  p.w_c2 = Tensor(Shape::vector(h), row.data);
  p.b_c2 = Tensor::scalar(0.0);
  return p;
}

PolicyGraph::PolicyGraph(Tape& tape, const PolicyParams& params, std::size_t batch)
    : tape_(tape), params_(params), batch_(batch) {
  if (batch == 0) throw std::invalid_argument("PolicyGraph: batch must be positive");
  const auto named = params.named();
  nodes_.ordered.reserve(named.size());
  for (const auto& [name, t] : named) {
    const Var v = tape_.input(*t);
    nodes_.ordered.push_back(v);
    if (name == "W_enc") nodes_.W_enc = v;
    else if (name == "b_enc") nodes_.b_enc = v;
    else if (name == "W_z") nodes_.W_z = v;
    else if (name == "U_z") nodes_.U_z = v;
    else if (name == "b_z") nodes_.b_z = v;
    else if (name == "W_r") nodes_.W_r = v;
    else if (name == "U_r") nodes_.U_r = v;
    else if (name == "b_r") nodes_.b_r = v;
    else if (name == "W_n") nodes_.W_n = v;
    else if (name == "U_n") nodes_.U_n = v;
    else if (name == "b_n") nodes_.b_n = v;
    else if (name == "W_in") nodes_.W_in = v;
    else if (name == "W_rec") nodes_.W_rec = v;
    else if (name == "log_alpha") nodes_.log_alpha = v;
    else if (name == "W_out") nodes_.W_out = v;
    else if (name == "b_out") nodes_.b_out = v;
    else if (name == "log_std") nodes_.log_std = v;
    else if (name == "W_c1") nodes_.W_c1 = v;
    else if (name == "b_c1") nodes_.b_c1 = v;
    else if (name == "w_c2") nodes_.w_c2 = v;
    else if (name == "b_c2") nodes_.b_c2 = v;
  }
}

Var PolicyGraph::ones_row_vector() {
  if (!ones_) ones_ = tape_.constant(Tensor::ones(Shape::vector(batch_)));
  return *ones_;
}

Var PolicyGraph::zeros(std::size_t rows) {
  return tape_.constant(Tensor::zeros(Shape::matrix(rows, batch_)));
}

Var PolicyGraph::broadcast(Var v, std::optional<Var>& cache) {
  if (!cache) cache = tape_.matmul(v, ones_row_vector());
  return *cache;
}

Var PolicyGraph::affine(Var W, Var x, Var b, std::optional<Var>& cache) {
  return tape_.add(tape_.matmul(W, x), broadcast(b, cache));
}

Var PolicyGraph::encode(Var y) {
  return tape_.tanh(affine(nodes_.W_enc, y, nodes_.b_enc, b_enc_));
}

Var PolicyGraph::gru_step(Var enc, Var h) {
  Tape& t = tape_;
  const ParamNodes& p = nodes_;
  const Var z = t.sigmoid(t.add(affine(p.W_z, enc, p.b_z, b_z_), t.matmul(p.U_z, h)));
  const Var r = t.sigmoid(t.add(affine(p.W_r, enc, p.b_r, b_r_), t.matmul(p.U_r, h)));
  const Var n = t.tanh(t.add(affine(p.W_n, enc, p.b_n, b_n_), t.matmul(p.U_n, t.mul(r, h))));
  // h' = (1 - z) h + z n = h + z (n - h)
  return t.add(h, t.mul(z, t.sub(n, h)));
}

Var PolicyGraph::ctrnn_step(Var enc, Var h) {
  Tape& t = tape_;
  const ParamNodes& p = nodes_;
  const Var alpha = t.sigmoid(p.log_alpha);
  const Var keep = t.sub(t.constant(Tensor::scalar(1.0)), alpha);
  const Var drive = t.tanh(t.add(t.matmul(p.W_in, enc), t.matmul(p.W_rec, h)));
  return t.add(t.scale(h, keep), t.scale(drive, alpha));
}

Var PolicyGraph::actor_mean(Var h) { return affine(nodes_.W_out, h, nodes_.b_out, b_out_); }

Var PolicyGraph::critic_value(Var enc, Var h) {
  Tape& t = tape_;
  const ParamNodes& p = nodes_;
  const Var hidden = t.tanh(affine(p.W_c1, t.concat(enc, h), p.b_c1, b_c1_));
  const Var head = t.dot(broadcast(p.w_c2, w_c2_), hidden, Reduce::kColumns);
  if (!b_c2_) b_c2_ = t.scale(ones_row_vector(), p.b_c2);
  return t.add(head, *b_c2_);
}

Var PolicyGraph::log_prob(Var mu, Var u) {
  Tape& t = tape_;
  const ParamNodes& p = nodes_;
  if (!inv_std_) {
    const Var neg_log_std = t.scale(p.log_std, t.constant(Tensor::scalar(-1.0)));
    inv_std_ = t.matmul(t.exp(neg_log_std), ones_row_vector());
  }
  const Var z = t.mul(t.sub(u, mu), *inv_std_);
  const Var sq = t.sum(t.mul(z, z), Reduce::kColumns);
  const double d_u = static_cast<double>(params_.dims.d_u);
  const Var norm = t.add(t.sum(p.log_std), t.constant(Tensor::scalar(0.5 * d_u * kLog2Pi)));
  return t.sub(t.scale(sq, t.constant(Tensor::scalar(-0.5))), t.scale(ones_row_vector(), norm));
}

Var PolicyGraph::entropy() {
  const double d_u = static_cast<double>(params_.dims.d_u);
  return tape_.add(tape_.sum(nodes_.log_std), tape_.constant(Tensor::scalar(d_u * kHalfLog2PiE)));
}

PolicyParams PolicyGraph::gradients() const {
  PolicyParams g = params_;
  auto named = g.named();
  for (std::size_t i = 0; i < named.size(); ++i) *named[i].second = tape_.adjoint(nodes_.ordered[i]);
  return g;
}

ActionSample sample_action(const PolicyParams& params, const Tensor& mu, Rng& rng) {
  const std::size_t d_u = mu.shape.rows();
  const std::size_t n = mu.shape.cols();
  std::normal_distribution<double> normal(0.0, 1.0);
  ActionSample s;
  s.u_raw = Tensor(mu.shape);
  s.logp.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < d_u; ++i) {
      const double eps = normal(rng);
      s.u_raw.data[i * n + j] = mu.data[i * n + j] + std::exp(params.log_std[i]) * eps;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    Vec m(d_u), u(d_u);
    for (std::size_t i = 0; i < d_u; ++i) {
      m[i] = mu.data[i * n + j];
      u[i] = s.u_raw.data[i * n + j];
    }
    s.logp[j] = log_prob(params, m, u);
  }
  return s;
}

double log_prob(const PolicyParams& params, const Vec& mu, const Vec& u_raw) {
  double sq = 0.0, log_std_sum = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double z = (u_raw[i] - mu[i]) * std::exp(-params.log_std[i]);
    sq += z * z;
    log_std_sum += params.log_std[i];
  }
  return -0.5 * sq - (log_std_sum + 0.5 * static_cast<double>(mu.size()) * kLog2Pi);
}

double entropy(const PolicyParams& params) {
  double e = 0.0;
  for (double ls : params.log_std.data) e += kHalfLog2PiE + ls;
  return e;
}

}  // namespace costate
