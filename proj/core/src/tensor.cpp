#include "coar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace coar {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
  if (shape_.size() > 4) throw ShapeError("tensor rank above 4: " + shape_string(shape_));
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, DType dtype)
    : shape_(std::move(shape)), data_(values.begin(), values.end()), dtype_(dtype) {
  if (shape_.size() > 4) throw ShapeError("tensor rank above 4: " + shape_string(shape_));
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::matrix(int rows, int cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

int Tensor::rows() const {
  if (shape_.empty()) return 1;
  int r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

int Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double& Tensor::at(int i, int j, int k) {
  return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
}

double Tensor::at(int i, int j, int k) const {
  return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
}

std::span<double> Tensor::row(int r) {
  const auto c = static_cast<std::size_t>(cols());
  return std::span<double>(data_).subspan(static_cast<std::size_t>(r) * c, c);
}

std::span<const double> Tensor::row(int r) const {
  const auto c = static_cast<std::size_t>(cols());
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(r) * c, c);
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(std::vector<int> shape) {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  if (shape.size() > 4) throw ShapeError("tensor rank above 4: " + shape_string(shape));
  shape_ = std::move(shape);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace coar
