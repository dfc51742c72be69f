#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace ckgan {

/// Allocator that default-initializes (i.e. leaves doubles uninitialized) so
/// full-overwrite op outputs skip a wasted zeroing pass.
template <typename T, typename Base = std::allocator<T>>
struct DefaultInitAllocator : public Base {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U, typename std::allocator_traits<Base>::template rebind_alloc<U>>;
  };
  using Base::Base;
  template <typename U>
  void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    std::allocator_traits<Base>::construct(static_cast<Base&>(*this), ptr,
                                           std::forward<Args>(args)...);
  }
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major tensor of 64-bit floats. Rank 0 (empty shape) is a scalar
/// holding exactly one value.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  /// Allocated but uninitialized; caller must write every element.
  static Tensor uninit(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-2 access
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  /// Value of a single-element tensor; throws otherwise.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  /// Extracts row i of a rank-2 tensor as a rank-1 tensor.
  Tensor row(std::size_t i) const;

 private:
  struct Uninit {};
  Tensor(Shape shape, Uninit);

  Shape shape_;
  std::vector<double, DefaultInitAllocator<double>> data_;
};

}  // namespace ckgan
