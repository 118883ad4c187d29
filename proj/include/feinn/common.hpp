#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <stdexcept>
#include <string>

namespace feinn {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using Mat2 = Eigen::Matrix2d;
using MatX = Eigen::MatrixXd;
using Mat32 = Eigen::Matrix<double, 3, 2>;

/// Sparse matrices are stored row-major (CSR: row offsets, column ids, values).
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
/// Column-major variant used by sparse factorisations.
using SpMatC = Eigen::SparseMatrix<double>;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

/// A field evaluable at physical points. `ncomp` is 1 for scalars, 2 for
/// plane vector fields and 3 for ambient-space fields on surfaces.
struct Field {
  int ncomp = 0;
  std::function<void(const Vec3&, double*)> eval;

  double scalar(const Vec3& x) const {
    double v;
    eval(x, &v);
    return v;
  }
  VecX vector(const Vec3& x) const {
    VecX v(ncomp);
    eval(x, v.data());
    return v;
  }
};

inline Field scalar_field(std::function<double(const Vec3&)> f) {
  return Field{1, [f = std::move(f)](const Vec3& x, double* out) { out[0] = f(x); }};
}

inline Field constant_scalar(double c) {
  return Field{1, [c](const Vec3&, double* out) { out[0] = c; }};
}

/// Row-major flattening between point batches (rows) and stacked sample vectors.
inline VecX flatten_rows(const MatX& Y) {
  VecX s(Y.size());
  for (int r = 0; r < Y.rows(); ++r)
    for (int c = 0; c < Y.cols(); ++c) s[static_cast<long>(r) * Y.cols() + c] = Y(r, c);
  return s;
}

inline MatX unflatten_rows(const VecX& s, long rows, int cols) {
  MatX Y(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) Y(r, c) = s[r * cols + c];
  return Y;
}

}  // namespace feinn
