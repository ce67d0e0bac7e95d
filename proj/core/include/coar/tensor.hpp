#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace coar {

/// Storage tag carried by a tensor. Values are always held in memory as
/// doubles; the tag decides the on-disk encoding.
enum class DType : std::uint8_t { F32 = 0, F64 = 1, I32 = 2 };

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Cache-line aligned allocator. Vectorised reductions split work by address,
/// so a fixed alignment keeps results bitwise reproducible across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of rank 0..4.
///
/// Spatial maps are laid out channels-last, so an H x W x C map is also a
/// valid (H*W) x C matrix without copying.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0, DType dtype = DType::F64);
  Tensor(std::vector<int> shape, std::vector<double> values, DType dtype = DType::F64);

  static Tensor matrix(int rows, int cols, std::initializer_list<double> values);
  static Tensor vector(std::initializer_list<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent when viewed as a matrix (product of all but the last axis).
  int rows() const;
  /// Trailing extent when viewed as a matrix.
  int cols() const;

  DType dtype() const { return dtype_; }
  void set_dtype(DType dtype) { dtype_ = dtype; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  double& at(int i, int j, int k);
  double at(int i, int j, int k) const;

  std::span<double> row(int r);
  std::span<const double> row(int r) const;

  /// Same data, new shape. Element counts must agree.
  Tensor reshaped(std::vector<int> shape) const;
  void reshape(std::vector<int> shape);

  void fill(double value);
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<int> shape_;
  AlignedBuffer data_;
  DType dtype_ = DType::F64;
};

std::size_t element_count(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

}  // namespace coar
