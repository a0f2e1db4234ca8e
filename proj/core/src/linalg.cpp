#include "disents/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "disents/error.hpp"

namespace disents {

Tensor pinv(const Tensor& x, double rcond) {
  if (x.rank() != 2) throw ShapeError("pinv: expected a matrix, got " + shape_str(x.shape()));
  if (!x.all_finite()) throw NumericError("pinv: non-finite entries in input");

  const auto m = static_cast<Eigen::Index>(x.dim(0));
  const auto n = static_cast<Eigen::Index>(x.dim(1));
  Tensor out({x.dim(1), x.dim(0)});
  if (m == 0 || n == 0) return out;

  Eigen::MatrixXd a(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      a(i, j) = x.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));

  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double cutoff = rcond * (s.size() ? s(0) : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  }
  const Eigen::MatrixXd p = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = p(i, j);
  return out;
}

}  // namespace disents
