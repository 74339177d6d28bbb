// Copyright 2026 The boxmatch Authors
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

#include "boxmatch/tensor.hpp"

#include <cmath>
#include <sstream>

namespace boxmatch
{

std::size_t shape_product(const std::vector<std::size_t> & shape)
{
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape_, double fill)
: shape(std::move(shape_)), data(shape_product(shape), fill)
{
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values)
: shape(std::move(shape_)), data(std::move(values))
{
  if (data.size() != shape_product(shape)) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill)
{
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Tensor t({r, c});
  std::size_t i = 0;
  for (const auto & row : rows) {
    if (row.size() != c) {
      throw ShapeError("ragged matrix literal");
    }
    for (double v : row) {
      t.data[i++] = v;
    }
  }
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values)
{
  return Tensor({1, values.size()}, std::vector<double>(values));
}

std::size_t Tensor::rows() const
{
  if (shape.size() == 1) {
    return 1;
  }
  if (shape.size() != 2) {
    throw ShapeError("expected rank-2 tensor, got " + shape_str());
  }
  return shape[0];
}

std::size_t Tensor::cols() const
{
  if (shape.size() == 1) {
    return shape[0];
  }
  if (shape.size() != 2) {
    throw ShapeError("expected rank-2 tensor, got " + shape_str());
  }
  return shape[1];
}

bool Tensor::all_finite() const
{
  for (double v : data) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

std::string Tensor::shape_str() const
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace boxmatch
