// Dense row-major N-d tensor used by the autograd kernels.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tssg {

using Shape = std::vector<int>;

/// Thrown when operands disagree on shape; the message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a public operation would produce NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;
  // Eigen reductions peel leading elements up to the next aligned address, so
  // summation order follows the buffer address. A fixed base alignment keeps
  // results bitwise repeatable across runs.
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::initializer_list<Scalar> data) : Tensor(std::move(shape), Storage(data)) {}
  Tensor(Shape shape, const std::vector<Scalar>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                       std::to_string(element_count(shape_)) + " elements but " +
                       std::to_string(data_.size()) + " values were supplied");
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const Scalar> data() const { return data_; }
  std::span<Scalar> data() { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  /// NCHW accessor for rank-4 tensors.
  Scalar& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const Scalar& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  /// View of a contiguous range as a row-major matrix.
  MatrixMap matrix(std::size_t start, int rows, int cols) {
    return MatrixMap(data_.data() + start, rows, cols);
  }
  ConstMatrixMap matrix(std::size_t start, int rows, int cols) const {
    return ConstMatrixMap(data_.data() + start, rows, cols);
  }

  Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<Scalar>) {
      for (Scalar v : data_) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    typename Tensor<Other>::Storage out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return Tensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    }
  }

  Shape shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using LabelTensor = Tensor<std::int32_t>;

/// Argmax bookkeeping of a 2x2 max-pool. Each entry is the per-plane flat
/// offset (h * W + w) of the window maximum in the pooled input.
struct PoolIndices {
  Shape input_shape;         // [N, C, H, W] of the pooled tensor
  Tensor<std::int32_t> argmax;  // [N, C, H/2, W/2]
};

inline void require_rank4(const Shape& shape, const char* what) {
  if (shape.size() != 4) {
    throw ShapeError(std::string(what) + " expects an [N,C,H,W] tensor, got " + to_string(shape));
  }
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " produced a non-finite value");
}

}  // namespace tssg
