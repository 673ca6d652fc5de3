#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bra/error.hpp"

namespace bra {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << ", ";
    out << s[i];
  }
  out << ']';
  return out.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

/// Dense n-dimensional array with row-major contiguous storage.
///
/// The one value type everything else is built on. Extents are always >= 1,
/// product(shape) == data length, and no operation ever aliases or mutates an
/// input: results are freshly allocated.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T{});
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw dimension_error("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor full(Shape shape, T fill) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = fill;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Row-major multi-index access; index count must equal the rank.
  template <typename... I>
  T& operator()(I... idx) {
    return data_[static_cast<std::size_t>(offset(idx...))];
  }
  template <typename... I>
  const T& operator()(I... idx) const {
    return data_[static_cast<std::size_t>(offset(idx...))];
  }

  template <typename... I>
  std::int64_t offset(I... idx) const {
    static_assert(sizeof...(I) >= 1);
    const std::int64_t ids[] = {static_cast<std::int64_t>(idx)...};
    if (sizeof...(I) != shape_.size()) {
      throw index_error("expected " + std::to_string(shape_.size()) + " indices, got " +
                        std::to_string(sizeof...(I)));
    }
    std::int64_t off = 0;
    for (std::size_t d = 0; d < shape_.size(); ++d) off = off * shape_[d] + ids[d];
    return off;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw dimension_error("tensor rank must be >= 1");
    for (auto e : shape_) {
      if (e < 1) throw dimension_error("all extents must be >= 1, got shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Integer tensor used for routing indices; entries index some other axis.
using IndexTensor = Tensor<std::int64_t>;

// Eigen aliases: the core keeps its own storage and maps slices on demand.
template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

template <typename T>
MapRM<T> map_matrix(Tensor<T>& t, std::int64_t rows, std::int64_t cols, std::int64_t offset = 0) {
  return MapRM<T>(t.data() + offset, rows, cols);
}

template <typename T>
ConstMapRM<T> map_matrix(const Tensor<T>& t, std::int64_t rows, std::int64_t cols,
                         std::int64_t offset = 0) {
  return ConstMapRM<T>(t.data() + offset, rows, cols);
}

}  // namespace bra
