#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace mforge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Paired samples, one row per observation. `x` holds the moment-function
// input; `z` the conditioning variable (zero columns for unconditional
// problems). IV datasets lay x out as [t..., y].
struct Dataset {
  Matrix x;
  Matrix z;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index x_dim() const { return x.cols(); }
  Eigen::Index z_dim() const { return z.cols(); }

  // Concatenated (x, z) rows, the input of the joint kernel.
  Matrix joint() const;

  Dataset rows(const std::vector<Eigen::Index>& idx) const;
  Dataset slice(Eigen::Index begin, Eigen::Index count) const;

  static Dataset unconditional(Matrix x);
};

}  // namespace mforge
