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

#include "costate/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace costate {

std::string Shape::to_string() const {
  switch (rank) {
    case 0: return "[]";
    case 1: return "[" + std::to_string(dims[0]) + "]";
    default: return "[" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + "]";
  }
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.size()) {
    throw std::invalid_argument("tensor: " + std::to_string(data.size()) +
                                " values for shape " + shape.to_string());
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape::vector(n), std::move(values));
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> values) {
  return Tensor(Shape::matrix(r, c), std::move(values));
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace costate
