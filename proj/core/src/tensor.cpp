#include "bdsl/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace bdsl {

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw SizeError("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw SizeError("tensor dimensions must be >= 1, got " + shape_to_string(shape));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw SizeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_to_string(shape_));
  }
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

template <typename T>
std::vector<std::size_t> BasicTensor<T>::strides() const {
  std::vector<std::size_t> s(shape_.size(), 1);
  for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
  return s;
}

template <typename T>
std::size_t BasicTensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of bounds");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  BasicTensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void BasicTensor<T>::reshape(Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != data_.size())
    throw SizeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  shape_ = std::move(shape);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void BasicTensor<T>::add_(const BasicTensor& other) {
  if (other.shape_ != shape_)
    throw ShapeError("add_: " + shape_to_string(shape_) + " vs " + shape_to_string(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
  return data_[0];
}

template <typename T>
bool BasicTensor<T>::identical(const BasicTensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
}

template <typename T>
BasicTensor<T> concat_values(const BasicTensor<T>& a, const BasicTensor<T>& b,
                             std::size_t axis) {
  if (a.ndim() != b.ndim() || axis >= a.ndim())
    throw ShapeError("concat: rank mismatch or bad axis");
  for (std::size_t i = 0; i < a.ndim(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat: " + shape_to_string(a.shape()) + " and " +
                       shape_to_string(b.shape()) + " differ off axis " + std::to_string(axis));
    }
  }
  Shape out_shape = a.shape();
  out_shape[axis] = a.dim(axis) + b.dim(axis);
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  const std::size_t a_block = a.size() / outer;
  const std::size_t b_block = b.size() / outer;
  std::vector<T> out;
  out.reserve(a.size() + b.size());
  for (std::size_t o = 0; o < outer; ++o) {
    out.insert(out.end(), a.data() + o * a_block, a.data() + (o + 1) * a_block);
    out.insert(out.end(), b.data() + o * b_block, b.data() + (o + 1) * b_block);
  }
  return BasicTensor<T>(std::move(out_shape), std::move(out));
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_values(const BasicTensor<T>& joined,
                                                       std::size_t axis,
                                                       std::size_t first_extent) {
  if (axis >= joined.ndim() || first_extent == 0 || first_extent >= joined.dim(axis))
    throw ShapeError("split: bad axis or extent");
  Shape sa = joined.shape();
  Shape sb = joined.shape();
  sa[axis] = first_extent;
  sb[axis] = joined.dim(axis) - first_extent;
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= joined.dim(i);
  const std::size_t a_block = shape_numel(sa) / outer;
  const std::size_t b_block = shape_numel(sb) / outer;
  std::vector<T> a, b;
  a.reserve(a_block * outer);
  b.reserve(b_block * outer);
  const T* src = joined.data();
  for (std::size_t o = 0; o < outer; ++o) {
    a.insert(a.end(), src, src + a_block);
    src += a_block;
    b.insert(b.end(), src, src + b_block);
    src += b_block;
  }
  return {BasicTensor<T>(std::move(sa), std::move(a)), BasicTensor<T>(std::move(sb), std::move(b))};
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> concat_values(const BasicTensor<float>&, const BasicTensor<float>&,
                                          std::size_t);
template BasicTensor<double> concat_values(const BasicTensor<double>&, const BasicTensor<double>&,
                                           std::size_t);
template std::pair<BasicTensor<float>, BasicTensor<float>> split_values(const BasicTensor<float>&,
                                                                        std::size_t, std::size_t);
template std::pair<BasicTensor<double>, BasicTensor<double>> split_values(
    const BasicTensor<double>&, std::size_t, std::size_t);

}  // namespace bdsl
