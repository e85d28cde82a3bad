// SPDX-License-Identifier: Apache-2.0
#include "nn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "util/error.hpp"

namespace rdet {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, ErrorKind::Parameter, "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  require(data_.size() == shape_size(shape_), ErrorKind::Parameter,
          "tensor value count does not match shape " + shape_str(shape_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  require(shape_size(shape) == data_.size(), ErrorKind::Parameter,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

Tensor Tensor::item(int index) const {
  require(!shape_.empty() && index >= 0 && index < shape_[0], ErrorKind::Parameter,
          "batch index out of range");
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t stride = shape_size(inner);
  std::vector<double> values(data_.begin() + static_cast<std::ptrdiff_t>(stride * index),
                             data_.begin() + static_cast<std::ptrdiff_t>(stride * (index + 1)));
  return Tensor(std::move(inner), std::move(values));
}

Tensor stack(std::span<const Tensor> items) {
  require(!items.empty(), ErrorKind::Parameter, "stack of zero tensors");
  Shape shape = items.front().shape();
  std::vector<double> values;
  values.reserve(items.size() * items.front().size());
  for (const Tensor& t : items) {
    require(t.shape() == shape, ErrorKind::Parameter,
            "stack shape mismatch: " + shape_str(t.shape()) + " vs " + shape_str(shape));
    values.insert(values.end(), t.values().begin(), t.values().end());
  }
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace rdet
