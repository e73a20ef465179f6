#pragma once

#include "mforge/kernels.hpp"
#include "mforge/mlp.hpp"
#include "mforge/types.hpp"

#include <memory>
#include <string_view>

namespace mforge {

enum class InstrumentKind { ConstVector, Rff, Mlp };

std::string_view instrument_kind_name(InstrumentKind kind);

// Instrument function h: Z -> R^m, paired with the moment function as
// psi(x; theta)^T h(z). Parameters are a flat vector:
//   ConstVector  h itself (length m); z is ignored
//   Rff          row-major m x d coefficient matrix C, h(z) = C phi(z)
//   Mlp          network parameters, one output head per moment
// The squared norm is the squared Euclidean norm of the parameter vector
// (Frobenius for RFF, RKHS norm under the feature map; weight decay for MLP).
class Instrument {
 public:
  Instrument() = default;

  static Instrument constant(Vector h);
  static Instrument zero_constant(Eigen::Index m);
  static Instrument rff(std::shared_ptr<const RffMap> map, Eigen::Index m);
  static Instrument mlp(Mlp net, Vector params);

  InstrumentKind kind() const { return kind_; }
  Eigen::Index output_dim() const { return m_; }
  Eigen::Index num_params() const { return params_.size(); }
  // Required z dimension, or -1 when z is ignored.
  Eigen::Index input_dim() const;

  const Vector& params() const { return params_; }
  void set_params(Vector params);
  Instrument with_params(Vector params) const;

  Vector evaluate(const Vector& z) const;
  Matrix evaluate_batch(const Matrix& z) const;

  double squared_norm() const { return params_.squaredNorm(); }

  // Gradient of psi_value^T h(z) with respect to the parameters.
  Vector param_gradient_of_pairing(const Vector& psi_value, const Vector& z) const;

  // Batched forms over a precomputed basis (RFF features of z, or z
  // itself for the other kinds). `weighted_psi` rows are w_j psi_j;
  // returns sum_j grad_params[(w_j psi_j)^T h(z_j)].
  RowMatrix basis(const Matrix& z) const;
  Matrix evaluate_basis(const RowMatrix& basis, Eigen::Index rows) const;
  Vector pairing_gradient(const RowMatrix& basis, const Matrix& weighted_psi) const;

  const RffMap* rff_map() const { return map_.get(); }
  const Mlp* net() const { return kind_ == InstrumentKind::Mlp ? &net_ : nullptr; }

 private:
  void check_z(const Matrix& z) const;

  InstrumentKind kind_ = InstrumentKind::ConstVector;
  Eigen::Index m_ = 0;
  Vector params_;
  std::shared_ptr<const RffMap> map_;
  Mlp net_;
};

}  // namespace mforge
