#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace splice {

using Scalar = float;
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatrixRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using VecMap = Eigen::Map<VectorX>;
using ConstVecMap = Eigen::Map<const VectorX>;
using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Dense n-d array: a shape over a flat row-major Eigen buffer.
/// Rank-2 (and collapsed rank-2) views map straight onto Eigen matrices,
/// so all heavy lifting stays inside Eigen expressions.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.setZero(count(shape_));
  }
  Tensor(Shape shape, ArrayX data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static Tensor scalar(Scalar v) { return full({1}, v); }
  static Tensor from_matrix(const MatrixRM& m) {
    Tensor t({m.rows(), m.cols()});
    t.mat() = m;
    return t;
  }
  static Tensor from_vector(const VectorX& v) {
    Tensor t({v.size()});
    t.vec() = v;
    return t;
  }

  static Index count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  ArrayX& array() { return data_; }
  const ArrayX& array() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar item() const {
    if (size() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return data_[0];
  }

  /// View as rows x cols matrix; the product must equal size().
  MatMap mat(Index rows, Index cols) {
    if (rows * cols != size()) throw std::logic_error("Tensor::mat bad view");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(Index rows, Index cols) const {
    if (rows * cols != size()) throw std::logic_error("Tensor::mat bad view");
    return ConstMatMap(data_.data(), rows, cols);
  }
  /// Rank-2 view with leading dims collapsed into rows.
  MatMap mat() { return mat(size() / last_dim(), last_dim()); }
  ConstMatMap mat() const { return mat(size() / last_dim(), last_dim()); }

  VecMap vec() { return VecMap(data_.data(), size()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), size()); }

  Tensor reshaped(Shape shape) const {
    if (count(shape) != size())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

 private:
  Index last_dim() const {
    return shape_.empty() ? 1 : shape_.back();
  }
  Shape shape_;
  ArrayX data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

}  // namespace splice
