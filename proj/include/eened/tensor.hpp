#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eened/errors.hpp"

namespace eened {

/// Extents of a dense tensor: rank 1 to 3, every extent positive.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 3;

  Shape() = default;

  Shape(std::initializer_list<std::size_t> extents) {
    if (extents.size() == 0 || extents.size() > kMaxRank) {
      throw DimensionError("tensor rank must be between 1 and 3, got " + std::to_string(extents.size()));
    }
    for (auto e : extents) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
      ext_[rank_++] = e;
    }
  }

  static Shape from(std::span<const std::size_t> extents) {
    Shape s;
    if (extents.empty() || extents.size() > kMaxRank) {
      throw DimensionError("tensor rank must be between 1 and 3, got " + std::to_string(extents.size()));
    }
    for (auto e : extents) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
      s.ext_[s.rank_++] = e;
    }
    return s;
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return ext_[i]; }
  std::span<const std::size_t> extents() const { return {ext_.data(), rank_}; }

  std::size_t size() const {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= ext_[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    return rank_ == o.rank_ && std::equal(ext_.begin(), ext_.begin() + rank_, o.ext_.begin());
  }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < rank_; ++i) {
      if (i) s += "x";
      s += std::to_string(ext_[i]);
    }
    return s + "]";
  }

 private:
  std::array<std::size_t, kMaxRank> ext_{};
  std::size_t rank_ = 0;
};

/// Handle of a tensor's node on a gradient tape.
struct TapeRef {
  std::uint64_t tape = 0;
  std::size_t node = 0;
};

/// Immutable dense row-major tensor. Copies share storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values)
      : shape_(shape), data_(std::make_shared<const std::vector<T>>(std::move(values))) {
    if (shape_.size() != data_->size()) {
      throw DimensionError("shape " + shape_.str() + " holds " + std::to_string(shape_.size()) +
                           " values, got " + std::to_string(data_->size()));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, std::vector<T>(shape.size(), T(0))); }
  static Tensor full(Shape shape, T v) { return Tensor(shape, std::vector<T>(shape.size(), v)); }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v));
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  bool empty() const { return data_ == nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return shape_.size(); }
  std::size_t rank() const { return shape_.rank(); }

  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }

  std::span<const T> data() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
  }

  T operator[](std::size_t i) const { return (*data_)[i]; }
  T operator()(std::size_t r, std::size_t c) const { return (*data_)[r * shape_[1] + c]; }

  bool all_finite() const {
    return std::all_of(data().begin(), data().end(), [](T v) { return std::isfinite(v); });
  }

  const std::optional<TapeRef>& node() const { return node_; }
  Tensor with_node(TapeRef ref) const {
    Tensor t = *this;
    t.node_ = ref;
    return t;
  }
  Tensor detached() const {
    Tensor t = *this;
    t.node_.reset();
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(size());
    std::transform(data().begin(), data().end(), v.begin(), [](T x) { return static_cast<U>(x); });
    return Tensor<U>(shape_, std::move(v));
  }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  std::optional<TapeRef> node_;
};

}  // namespace eened
