#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace medvqa {

// Dense row-major float64 tensor. All training math runs in double; weights
// are narrowed to float32 only when written to a checkpoint.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(element_count(shape), 0.0) {}

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const noexcept { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }
  bool operator==(const Tensor&) const = default;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using Vector = Eigen::VectorXd;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

// 2-D view of a tensor; rank-1 tensors are viewed as a column.
inline MatrixMap as_matrix(Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.shape.at(0));
  const auto cols = static_cast<Eigen::Index>(t.size() / t.shape.at(0));
  return MatrixMap(t.data.data(), rows, cols);
}
inline ConstMatrixMap as_matrix(const Tensor& t) {
  const auto rows = static_cast<Eigen::Index>(t.shape.at(0));
  const auto cols = static_cast<Eigen::Index>(t.size() / t.shape.at(0));
  return ConstMatrixMap(t.data.data(), rows, cols);
}
inline VectorMap as_vector(Tensor& t) {
  return VectorMap(t.data.data(), static_cast<Eigen::Index>(t.size()));
}
inline ConstVectorMap as_vector(const Tensor& t) {
  return ConstVectorMap(t.data.data(), static_cast<Eigen::Index>(t.size()));
}

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

}  // namespace medvqa
