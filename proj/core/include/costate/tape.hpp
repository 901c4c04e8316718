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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records primitives eagerly: every call computes the forward value
// immediately and appends a node whose parents all have smaller ids. The
// reverse sweep visits nodes in descending id order, so accumulation order
// (and therefore every adjoint bit) is fixed by the recording order.
//
// Broadcasting is limited to what matmul/matvec give for free. Two rank-1
// promotion rules make outer products expressible: a rank-1 left operand of
// matmul is a column [n,1], a rank-1 right operand is a row [1,n]. So bias
// broadcast over a batch of n columns is matmul(b, ones(n)).

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "costate/tensor.hpp"

namespace costate {

enum class Op : std::uint8_t {
  kConstant,
  kInput,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kMatvec,
  kTanh,
  kSigmoid,
  kExp,
  kLog,
  kSum,
  kMean,
  kDot,
  kL2Norm,
  kConcat,
  kSlice,
  kScale,
  kStopGradient,
};

std::string_view op_name(Op op);

/// Reductions either collapse everything to a scalar or, for a rank-2
/// operand [r,c], collapse each column to one entry of a [c] vector.
enum class Reduce : std::uint8_t { kAll, kColumns };

/// Handle to a node on a specific tape.
struct Var {
  std::uint32_t id = 0;
};

struct TapeNode {
  std::uint32_t id = 0;
  Op op = Op::kConstant;
  std::uint8_t num_parents = 0;
  std::array<std::uint32_t, 2> parents{0, 0};
  Reduce reduce = Reduce::kAll;
  std::size_t begin = 0;  // slice bounds (rows)
  std::size_t end = 0;
  Tensor value;
  Tensor adjoint;  // empty data until touched by a reverse sweep
};

/// Non-copyable primitive-recording tape. One owner, no sharing across
/// threads; independent tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  // Leaves.
  Var constant(Tensor value);
  Var input(Tensor value);

  // Generic entry point. Typed helpers below forward here.
  Var record(Op op, std::span<const Var> parents, Reduce reduce = Reduce::kAll,
             std::size_t begin = 0, std::size_t end = 0);

  Var add(Var a, Var b) { return record2(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return record2(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return record2(Op::kMul, a, b); }
  Var matmul(Var a, Var b) { return record2(Op::kMatmul, a, b); }
  Var matvec(Var m, Var v) { return record2(Op::kMatvec, m, v); }
  Var tanh(Var a) { return record1(Op::kTanh, a); }
  Var sigmoid(Var a) { return record1(Op::kSigmoid, a); }
  Var exp(Var a) { return record1(Op::kExp, a); }
  Var log(Var a) { return record1(Op::kLog, a); }
  Var sum(Var a, Reduce r = Reduce::kAll) { return record1(Op::kSum, a, r); }
  Var mean(Var a, Reduce r = Reduce::kAll) { return record1(Op::kMean, a, r); }
  Var dot(Var a, Var b, Reduce r = Reduce::kAll) { return record2(Op::kDot, a, b, r); }
  Var l2norm(Var a, Reduce r = Reduce::kAll) { return record1(Op::kL2Norm, a, r); }
  /// Stack along rows: [m] ++ [n] -> [m+n], [m,c] ++ [n,c] -> [m+n,c].
  Var concat(Var a, Var b) { return record2(Op::kConcat, a, b); }
  /// Rows [begin, end) of a rank-1 or rank-2 tensor.
  Var slice(Var a, std::size_t begin, std::size_t end);
  /// s * x where s is a scalar node; differentiable in both.
  Var scale(Var x, Var s) { return record2(Op::kScale, x, s); }
  Var stop_gradient(Var a) { return record1(Op::kStopGradient, a); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const TapeNode& node(Var v) const { return nodes_.at(v.id); }

  /// Reverse sweep from a scalar output. Previous adjoints are cleared.
  void backward(Var output);
  /// Adjoint after the last sweep; zeros if the node was never reached.
  Tensor adjoint(Var v) const;
  /// Sweep from `output` and return the adjoint of `target`. Values are
  /// untouched; a target that is not an ancestor yields zeros.
  Tensor grad_wrt(Var output, Var target);
  void reset_adjoints();

 private:
  Var record1(Op op, Var a, Reduce r = Reduce::kAll) {
    const Var p[1] = {a};
    return record(op, p, r);
  }
  Var record2(Op op, Var a, Var b, Reduce r = Reduce::kAll) {
    const Var p[2] = {a, b};
    return record(op, p, r);
  }
  Tensor forward(const TapeNode& n) const;
  void propagate(const TapeNode& n);
  Tensor& adjoint_slot(std::uint32_t id);

  std::vector<TapeNode> nodes_;
};

}  // namespace costate
