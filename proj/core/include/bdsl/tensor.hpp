#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "bdsl/errors.hpp"

namespace bdsl {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

/// Allocates on 64-byte boundaries. Vectorised reductions peel by address,
/// so a fixed alignment keeps results independent of where the heap lands.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major n-dimensional array.
///
/// Dimensions are all >= 1 and the flat buffer always holds exactly
/// product(shape) elements. Scalars are represented with shape {1}.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  /// Filled with `fill`.
  explicit BasicTensor(Shape shape, T fill = T{0});
  /// Copies `data`; its length must match the shape.
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), T{0}); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), T{1}); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::vector<std::size_t> strides() const;
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T> vector() const { return {data_.begin(), data_.end()}; }

  /// Same data, new shape with an equal element count.
  BasicTensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  void fill(T value);
  /// this += other, shapes must match.
  void add_(const BasicTensor& other);

  /// Single-element value (loss tensors).
  T item() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  /// Bitwise equality of shape and contents.
  bool identical(const BasicTensor& other) const;

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorF64 = BasicTensor<double>;

/// Joins along `axis`; all other dimensions must agree.
template <typename T>
BasicTensor<T> concat_values(const BasicTensor<T>& a, const BasicTensor<T>& b,
                             std::size_t axis);

/// Inverse of concat_values: splits `joined` at `first_extent` along `axis`.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_values(const BasicTensor<T>& joined,
                                                       std::size_t axis,
                                                       std::size_t first_extent);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace bdsl
