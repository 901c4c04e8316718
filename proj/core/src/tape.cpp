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

#include "costate/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace costate {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct Dims2 {
  std::size_t r, c;
};

// matmul operand views under the rank-1 promotion rules.
Dims2 left_view(const Shape& s) {
  return s.rank == 2 ? Dims2{s.dims[0], s.dims[1]} : Dims2{s.dims[0], 1};
}
Dims2 right_view(const Shape& s) {
  return s.rank == 2 ? Dims2{s.dims[0], s.dims[1]} : Dims2{1, s.dims[0]};
}

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape* b = nullptr,
                              std::string_view detail = {}) {
  std::ostringstream os;
  os << op_name(op) << ": incompatible shape " << a.to_string();
  if (b != nullptr) os << " and " << b->to_string();
  if (!detail.empty()) os << " (" << detail << ")";
  throw std::invalid_argument(os.str());
}

void add_into(std::vector<double>& dst, const std::vector<double>& src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kInput: return "input";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatmul: return "matmul";
    case Op::kMatvec: return "matvec";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kDot: return "dot";
    case Op::kL2Norm: return "l2norm";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kScale: return "scale";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "unknown";
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw std::domain_error("constant: non-finite value");
  TapeNode n;
  n.id = static_cast<std::uint32_t>(nodes_.size());
  n.op = Op::kConstant;
  n.value = std::move(value);
  n.adjoint.data.clear();
  nodes_.push_back(std::move(n));
  return Var{nodes_.back().id};
}

Var Tape::input(Tensor value) {
  Var v = constant(std::move(value));
  nodes_.back().op = Op::kInput;
  return v;
}

Var Tape::slice(Var a, std::size_t begin, std::size_t end) {
  const Var p[1] = {a};
  return record(Op::kSlice, p, Reduce::kAll, begin, end);
}

Var Tape::record(Op op, std::span<const Var> parents, Reduce reduce, std::size_t begin,
                 std::size_t end) {
  if (op == Op::kConstant || op == Op::kInput) {
    throw std::invalid_argument("record: leaves are created with constant()/input()");
  }
  TapeNode n;
  n.id = static_cast<std::uint32_t>(nodes_.size());
  n.op = op;
  n.reduce = reduce;
  n.begin = begin;
  n.end = end;
  const std::size_t arity =
      (op == Op::kAdd || op == Op::kSub || op == Op::kMul || op == Op::kMatmul ||
       op == Op::kMatvec || op == Op::kDot || op == Op::kConcat || op == Op::kScale)
          ? 2
          : 1;
  if (parents.size() != arity) {
    throw std::invalid_argument(std::string(op_name(op)) + ": wrong number of parents");
  }
  for (std::size_t i = 0; i < arity; ++i) {
    if (parents[i].id >= n.id) {
      throw std::invalid_argument(std::string(op_name(op)) + ": unknown parent id");
    }
    n.parents[i] = parents[i].id;
  }
  n.num_parents = static_cast<std::uint8_t>(arity);
  n.value = forward(n);
  if (!n.value.all_finite()) {
    throw std::domain_error(std::string(op_name(op)) + ": non-finite value produced");
  }
  n.adjoint.data.clear();
  nodes_.push_back(std::move(n));
  return Var{nodes_.back().id};
}

Tensor Tape::forward(const TapeNode& n) const {
  const Tensor& a = nodes_[n.parents[0]].value;
  const Tensor* b = n.num_parents == 2 ? &nodes_[n.parents[1]].value : nullptr;
  const Shape& sa = a.shape;

  switch (n.op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      if (sa != b->shape) shape_error(n.op, sa, &b->shape);
      Tensor out(sa);
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = n.op == Op::kAdd   ? a[i] + (*b)[i]
                 : n.op == Op::kSub ? a[i] - (*b)[i]
                                    : a[i] * (*b)[i];
      }
      return out;
    }
    case Op::kMatmul: {
      if (sa.rank == 0 || b->shape.rank == 0) shape_error(n.op, sa, &b->shape);
      const Dims2 l = left_view(sa);
      const Dims2 r = right_view(b->shape);
      if (l.c != r.r) shape_error(n.op, sa, &b->shape);
      Tensor out(Shape::matrix(l.r, r.c));
      MutMap(out.data.data(), l.r, r.c).noalias() =
          ConstMap(a.data.data(), l.r, l.c) * ConstMap(b->data.data(), r.r, r.c);
      return out;
    }
    case Op::kMatvec: {
      if (sa.rank != 2 || b->shape.rank != 1 || sa.dims[1] != b->shape.dims[0]) {
        shape_error(n.op, sa, &b->shape);
      }
      Tensor out(Shape::vector(sa.dims[0]));
      MutMap(out.data.data(), sa.dims[0], 1).noalias() =
          ConstMap(a.data.data(), sa.dims[0], sa.dims[1]) *
          ConstMap(b->data.data(), sa.dims[1], 1);
      return out;
    }
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kExp:
    case Op::kLog: {
      Tensor out(sa);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a[i];
        switch (n.op) {
          case Op::kTanh: out[i] = std::tanh(x); break;
          case Op::kSigmoid:
            out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            break;
          case Op::kExp: out[i] = std::exp(x); break;
          default:
            if (!(x > 0)) shape_error(n.op, sa, nullptr, "argument must be positive");
            out[i] = std::log(x);
        }
      }
      return out;
    }
    case Op::kSum:
    case Op::kMean:
    case Op::kL2Norm:
    case Op::kDot: {
      if (n.op == Op::kDot && sa != b->shape) shape_error(n.op, sa, &b->shape);
      auto term = [&](std::size_t i) {
        if (n.op == Op::kDot) return a[i] * (*b)[i];
        if (n.op == Op::kL2Norm) return a[i] * a[i];
        return a[i];
      };
      if (n.reduce == Reduce::kAll) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += term(i);
        if (n.op == Op::kMean) acc /= static_cast<double>(a.size());
        if (n.op == Op::kL2Norm) acc = std::sqrt(acc);
        return Tensor::scalar(acc);
      }
      if (sa.rank != 2) shape_error(n.op, sa, b ? &b->shape : nullptr, "column reduction needs rank 2");
      const std::size_t rows = sa.dims[0], cols = sa.dims[1];
      Tensor out(Shape::vector(cols));
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out[j] += term(i * cols + j);
      }
      for (std::size_t j = 0; j < cols; ++j) {
        if (n.op == Op::kMean) out[j] /= static_cast<double>(rows);
        if (n.op == Op::kL2Norm) out[j] = std::sqrt(out[j]);
      }
      return out;
    }
    case Op::kConcat: {
      const Shape& sb = b->shape;
      if (sa.rank == 1 && sb.rank == 1) {
        Tensor out(Shape::vector(sa.dims[0] + sb.dims[0]));
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b->data.begin(), b->data.end(), out.data.begin() + a.size());
        return out;
      }
      if (sa.rank == 2 && sb.rank == 2 && sa.dims[1] == sb.dims[1]) {
        Tensor out(Shape::matrix(sa.dims[0] + sb.dims[0], sa.dims[1]));
        std::copy(a.data.begin(), a.data.end(), out.data.begin());
        std::copy(b->data.begin(), b->data.end(), out.data.begin() + a.size());
        return out;
      }
      shape_error(n.op, sa, &sb);
    }
    case Op::kSlice: {
      if (sa.rank == 0 || n.begin >= n.end || n.end > sa.dims[0]) {
        shape_error(n.op, sa, nullptr, "bad row range");
      }
      const std::size_t cols = sa.cols();
      Tensor out(sa.rank == 1 ? Shape::vector(n.end - n.begin)
                              : Shape::matrix(n.end - n.begin, cols));
      std::copy(a.data.begin() + n.begin * cols, a.data.begin() + n.end * cols,
                out.data.begin());
      return out;
    }
    case Op::kScale: {
      if (b->shape.rank != 0) shape_error(n.op, sa, &b->shape, "scale factor must be a scalar");
      Tensor out(sa);
      const double s = b->item();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
      return out;
    }
    case Op::kStopGradient:
      return a;
    default:
      break;
  }
  throw std::logic_error("forward: unhandled op");
}

Tensor& Tape::adjoint_slot(std::uint32_t id) {
  TapeNode& n = nodes_[id];
  if (n.adjoint.data.empty()) {
    n.adjoint.shape = n.value.shape;
    n.adjoint.data.assign(n.value.size(), 0.0);
  }
  return n.adjoint;
}

void Tape::reset_adjoints() {
  for (auto& n : nodes_) n.adjoint.data.clear();
}

Tensor Tape::adjoint(Var v) const {
  const TapeNode& n = nodes_.at(v.id);
  if (n.adjoint.data.empty()) return Tensor::zeros(n.value.shape);
  return n.adjoint;
}

void Tape::backward(Var output) {
  if (output.id >= nodes_.size()) throw std::invalid_argument("backward: unknown node");
  if (nodes_[output.id].value.shape.rank != 0) {
    throw std::invalid_argument("backward: output must be a scalar, got shape " +
                                nodes_[output.id].value.shape.to_string());
  }
  reset_adjoints();
  adjoint_slot(output.id)[0] = 1.0;
  for (std::uint32_t id = output.id + 1; id-- > 0;) {
    const TapeNode& n = nodes_[id];
    if (n.adjoint.data.empty() || n.num_parents == 0 || n.op == Op::kStopGradient) continue;
    propagate(n);
  }
}

Tensor Tape::grad_wrt(Var output, Var target) {
  backward(output);
  Tensor g = adjoint(target);
  reset_adjoints();
  return g;
}

void Tape::propagate(const TapeNode& n) {
  const std::vector<double>& g = n.adjoint.data;
  const std::uint32_t pa = n.parents[0];
  const std::uint32_t pb = n.parents[1];
  const Tensor& a = nodes_[pa].value;

  switch (n.op) {
    case Op::kAdd:
      add_into(adjoint_slot(pa).data, g);
      add_into(adjoint_slot(pb).data, g);
      return;
    case Op::kSub:
      add_into(adjoint_slot(pa).data, g);
      add_into(adjoint_slot(pb).data, g, -1.0);
      return;
    case Op::kMul: {
      const Tensor& b = nodes_[pb].value;
      {
        auto& ga = adjoint_slot(pa).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      auto& gb = adjoint_slot(pb).data;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      return;
    }
    case Op::kMatmul: {
      const Tensor& b = nodes_[pb].value;
      const Dims2 l = left_view(a.shape);
      const Dims2 r = right_view(b.shape);
      ConstMap G(g.data(), l.r, r.c);
      MutMap(adjoint_slot(pa).data.data(), l.r, l.c).noalias() +=
          G * ConstMap(b.data.data(), r.r, r.c).transpose();
      MutMap(adjoint_slot(pb).data.data(), r.r, r.c).noalias() +=
          ConstMap(a.data.data(), l.r, l.c).transpose() * G;
      return;
    }
    case Op::kMatvec: {
      const Tensor& v = nodes_[pb].value;
      const std::size_t rows = a.shape.dims[0], cols = a.shape.dims[1];
      ConstMap G(g.data(), rows, 1);
      MutMap(adjoint_slot(pa).data.data(), rows, cols).noalias() +=
          G * ConstMap(v.data.data(), 1, cols);
      MutMap(adjoint_slot(pb).data.data(), cols, 1).noalias() +=
          ConstMap(a.data.data(), rows, cols).transpose() * G;
      return;
    }
    case Op::kTanh:
    case Op::kSigmoid:
    case Op::kExp:
    case Op::kLog: {
      const Tensor& y = n.value;
      auto& ga = adjoint_slot(pa).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d;
        switch (n.op) {
          case Op::kTanh: d = 1.0 - y[i] * y[i]; break;
          case Op::kSigmoid: d = y[i] * (1.0 - y[i]); break;
          case Op::kExp: d = y[i]; break;
          default: d = 1.0 / a[i];
        }
        ga[i] += g[i] * d;
      }
      return;
    }
    case Op::kSum:
    case Op::kMean:
    case Op::kL2Norm:
    case Op::kDot: {
      const bool all = n.reduce == Reduce::kAll;
      const std::size_t cols = all ? 1 : a.shape.dims[1];
      const double count = all ? static_cast<double>(a.size())
                               : static_cast<double>(a.shape.dims[0]);
      auto upstream = [&](std::size_t i) { return all ? g[0] : g[i % cols]; };
      auto out_value = [&](std::size_t i) { return all ? n.value[0] : n.value[i % cols]; };
      auto& ga = adjoint_slot(pa).data;
      if (n.op == Op::kDot) {
        const Tensor& b = nodes_[pb].value;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += upstream(i) * b[i];
        auto& gb = adjoint_slot(pb).data;
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += upstream(i) * a[i];
        return;
      }
      for (std::size_t i = 0; i < ga.size(); ++i) {
        if (n.op == Op::kSum) {
          ga[i] += upstream(i);
        } else if (n.op == Op::kMean) {
          ga[i] += upstream(i) / count;
        } else {
          // The norm's derivative at the origin is taken as zero.
          const double norm = out_value(i);
          if (norm > 0) ga[i] += upstream(i) * a[i] / norm;
        }
      }
      return;
    }
    case Op::kConcat: {
      auto& ga = adjoint_slot(pa).data;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      auto& gb = adjoint_slot(pb).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[ga.size() + i];
      return;
    }
    case Op::kSlice: {
      const std::size_t offset = n.begin * a.shape.cols();
      auto& ga = adjoint_slot(pa).data;
      for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
      return;
    }
    case Op::kScale: {
      const double s = nodes_[pb].value.item();
      double gs = 0.0;
      auto& ga = adjoint_slot(pa).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += s * g[i];
        gs += g[i] * a[i];
      }
      adjoint_slot(pb)[0] += gs;
      return;
    }
    default:
      return;
  }
}

}  // namespace costate
