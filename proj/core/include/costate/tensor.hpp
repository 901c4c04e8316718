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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace costate {

/// Shape of a dense tensor of rank 0 (scalar), 1 (vector) or 2 (matrix).
struct Shape {
  std::uint8_t rank = 0;
  std::array<std::size_t, 2> dims{0, 0};

  static Shape scalar() { return Shape{}; }
  static Shape vector(std::size_t n) { return Shape{1, {n, 0}}; }
  static Shape matrix(std::size_t r, std::size_t c) { return Shape{2, {r, c}}; }

  std::size_t size() const {
    switch (rank) {
      case 0: return 1;
      case 1: return dims[0];
      default: return dims[0] * dims[1];
    }
  }
  // A vector is viewed as a column, a scalar as 1x1.
  std::size_t rows() const { return rank == 0 ? 1 : dims[0]; }
  std::size_t cols() const { return rank == 2 ? dims[1] : 1; }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    if (rank >= 1 && dims[0] != o.dims[0]) return false;
    if (rank == 2 && dims[1] != o.dims[1]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string to_string() const;
};

/// Dense row-major tensor of 64-bit reals.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() : data(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape::scalar(), v); }
  static Tensor vector(std::vector<double> values);
  static Tensor vector(std::initializer_list<double> values) {
    return vector(std::vector<double>(values));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values);
  static Tensor zeros(Shape s) { return Tensor(s, 0.0); }
  static Tensor ones(Shape s) { return Tensor(s, 1.0); }

  std::size_t size() const { return data.size(); }
  double item() const { return data.at(0); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * shape.cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape.cols() + c]; }

  bool all_finite() const;
};

}  // namespace costate
