#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pixeldyn {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kLog2Pi = 1.8378770664093454836;

using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<MatX>;
using EigenCMap = Eigen::Map<const MatX>;

// Dense 64-bit float tensor, row-major. Graph ops treat rank-1 as a column
// vector and support rank <= 2.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(int r) : shape{r}, v(static_cast<size_t>(r), 0.0) {}
  Tensor(int r, int c) : shape{r, c}, v(static_cast<size_t>(r) * c, 0.0) {}

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  static Tensor from(int r, int c, std::initializer_list<double> xs) {
    Tensor t(r, c);
    if (xs.size() != t.v.size()) throw ShapeError("Tensor::from: size mismatch");
    std::copy(xs.begin(), xs.end(), t.v.begin());
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const {
    if (shape.size() >= 2) return shape[1];
    return shape.empty() ? 1 : 1;
  }
  size_t numel() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  double& operator()(int i, int j) { return v[static_cast<size_t>(i) * cols() + j]; }
  double operator()(int i, int j) const { return v[static_cast<size_t>(i) * cols() + j]; }
  double& operator[](size_t i) { return v[i]; }
  double operator[](size_t i) const { return v[i]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  EigenMap mat() { return EigenMap(v.data(), rows(), cols()); }
  EigenCMap mat() const { return EigenCMap(v.data(), rows(), cols()); }
};

inline Tensor from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Tensor t(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  t.mat() = m;
  return t;
}

}  // namespace pixeldyn
