#pragma once

#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dcrnet/errors.hpp"

namespace dcrnet {

namespace detail {

/// Flat numeric storage. Unlike std::vector it can hand out uninitialized
/// memory for buffers that are fully overwritten by the producing kernel.
template <typename T>
class RawBuffer {
  static_assert(std::is_trivial_v<T>, "RawBuffer holds trivial numeric types");

 public:
  RawBuffer() = default;
  RawBuffer(size_t n, bool zero) : ptr_(n ? new T[n] : nullptr), size_(n) {
    if (zero && n) std::memset(ptr_, 0, n * sizeof(T));
  }
  RawBuffer(const RawBuffer& o) : ptr_(o.size_ ? new T[o.size_] : nullptr), size_(o.size_) {
    if (size_) std::memcpy(ptr_, o.ptr_, size_ * sizeof(T));
  }
  RawBuffer(RawBuffer&& o) noexcept : ptr_(o.ptr_), size_(o.size_) {
    o.ptr_ = nullptr;
    o.size_ = 0;
  }
  RawBuffer& operator=(RawBuffer o) noexcept {
    std::swap(ptr_, o.ptr_);
    std::swap(size_, o.size_);
    return *this;
  }
  ~RawBuffer() { delete[] ptr_; }

  T* data() { return ptr_; }
  const T* data() const { return ptr_; }
  size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  T& operator[](size_t i) { return ptr_[i]; }
  const T& operator[](size_t i) const { return ptr_[i]; }
  T* begin() { return ptr_; }
  T* end() { return ptr_ + size_; }
  const T* begin() const { return ptr_; }
  const T* end() const { return ptr_ + size_; }

 private:
  T* ptr_ = nullptr;
  size_t size_ = 0;
};

}  // namespace detail

/// Dense row-major N-d array; the last axis varies fastest. Value semantics
/// throughout: copies copy the buffer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)),
        data_(static_cast<size_t>(checked_numel(shape_)), /*zero=*/true) {}

  Tensor(std::vector<int64_t> shape, const std::vector<T>& data)
      : shape_(std::move(shape)),
        data_(static_cast<size_t>(checked_numel(shape_)), /*zero=*/false) {
    if (data.size() != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape (" + shape_string(shape_) + ")");
    }
    std::memcpy(data_.data(), data.data(), data.size() * sizeof(T));
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  /// Storage without the zero fill, for outputs every element of which is
  /// about to be written.
  static Tensor uninitialized(std::vector<int64_t> shape) {
    Tensor t;
    size_t n = static_cast<size_t>(checked_numel(shape));
    t.shape_ = std::move(shape);
    t.data_ = detail::RawBuffer<T>(n, /*zero=*/false);
    return t;
  }

  static Tensor full(std::vector<int64_t> shape, T value) {
    Tensor t = uninitialized(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  static Tensor ones(std::vector<int64_t> shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Element access for 4-d tensors; intended for tests and cold paths.
  T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return const_cast<Tensor*>(this)->at4(n, c, h, w);
  }

  T& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  const T& at2(int64_t r, int64_t c) const { return const_cast<Tensor*>(this)->at2(r, c); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Metadata-only change; element count must be preserved.
  Tensor reshaped(std::vector<int64_t> new_shape) const {
    int64_t n = checked_numel(new_shape);
    if (n != numel()) {
      throw DimensionError("reshape from (" + shape_string(shape_) + ") to (" +
                           shape_string(new_shape) + ") changes element count");
    }
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out = Tensor<U>::uninitialized(shape_);
    U* dst = out.data();
    for (int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  void fill(T value) {
    for (auto& v : data_) v = value;
  }

  static std::string shape_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    return os.str();
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 1) {
        throw DimensionError("tensor dimensions must be >= 1, got (" + shape_string(shape) + ")");
      }
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  detail::RawBuffer<T> data_;
};

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace dcrnet
