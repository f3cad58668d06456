#include "qvp/nn/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "qvp/error.h"

namespace qvp::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ContractError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ContractError("Tensor::reshaped: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::gather(std::span<const std::size_t> indices) const {
  if (shape_.empty()) throw ContractError("Tensor::gather: scalar tensor");
  Shape shape = shape_;
  shape[0] = indices.size();
  Tensor out(shape);
  const std::size_t row = row_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= shape_[0]) throw ContractError("Tensor::gather: index out of range");
    std::memcpy(out.data() + i * row, data_.data() + indices[i] * row, row * sizeof(double));
  }
  return out;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace qvp::nn
