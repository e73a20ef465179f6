#pragma once

#include "mforge/mlp.hpp"
#include "mforge/types.hpp"

#include <cstdint>
#include <memory>
#include <string>

namespace mforge {

// Moment function psi(x; theta) in R^m with parameter Jacobian
// J(x; theta) = d psi / d theta in R^{p x m}. Models are stateless: theta
// is always passed in, so one instance can be shared across threads.
class MomentModel {
 public:
  virtual ~MomentModel() = default;

  virtual std::string name() const = 0;
  virtual Eigen::Index num_params() const = 0;
  virtual Eigen::Index psi_dim() const = 0;
  virtual Eigen::Index input_dim() const = 0;

  // One psi row per input row (n x m).
  virtual Matrix psi(const Matrix& x, const Vector& theta) const = 0;

  // sum_i J(x_i; theta) c_i, with c_i the i-th cotangent row (n x m).
  virtual Vector pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const = 0;

  virtual Vector initial_theta(std::uint64_t seed) const;

  Vector evaluate(const Vector& x, const Vector& theta) const;
  Matrix jacobian(const Vector& x, const Vector& theta) const;

 protected:
  void check_input(const Matrix& x, const Vector& theta) const;
};

// Scalar regression function g(t; theta) for IV residual models.
class RegressionFunction {
 public:
  virtual ~RegressionFunction() = default;

  virtual std::string name() const = 0;
  virtual Eigen::Index num_params() const = 0;
  virtual Eigen::Index input_dim() const = 0;

  // One value per row of t.
  virtual Vector value(const Matrix& t, const Vector& theta) const = 0;
  // sum_i c_i * grad_theta g(t_i; theta)
  virtual Vector pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const = 0;

  virtual Vector initial_theta(std::uint64_t seed) const;

  Vector gradient(const Vector& t, const Vector& theta) const;
};

// g(t; theta) = th2 + th3 (t - th1) + (th4 - th3)/2 * log(1 + e^{2 (t - th1)})
class HeteroIvFunction final : public RegressionFunction {
 public:
  static Vector true_theta();  // [2.0, 3.0, -0.5, 3.0]

  std::string name() const override { return "hetero_iv"; }
  Eigen::Index num_params() const override { return 4; }
  Eigen::Index input_dim() const override { return 1; }
  Vector value(const Matrix& t, const Vector& theta) const override;
  Vector pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const override;
  Vector initial_theta(std::uint64_t seed) const override;
};

// g(t; theta) = theta^T t (+ theta_last when with_intercept).
class LinearFunction final : public RegressionFunction {
 public:
  explicit LinearFunction(Eigen::Index input_dim = 1, bool with_intercept = false);

  std::string name() const override { return "linear"; }
  Eigen::Index num_params() const override { return dim_ + (intercept_ ? 1 : 0); }
  Eigen::Index input_dim() const override { return dim_; }
  Vector value(const Matrix& t, const Vector& theta) const override;
  Vector pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const override;

 private:
  Eigen::Index dim_;
  bool intercept_;
};

// Scalar-output network g_theta(t).
class MlpFunction final : public RegressionFunction {
 public:
  explicit MlpFunction(Mlp net);

  const Mlp& net() const { return net_; }
  std::string name() const override { return "mlp"; }
  Eigen::Index num_params() const override { return net_.num_params(); }
  Eigen::Index input_dim() const override { return net_.input_dim(); }
  Vector value(const Matrix& t, const Vector& theta) const override;
  Vector pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const override;
  Vector initial_theta(std::uint64_t seed) const override;

 private:
  Mlp net_;
};

// Numerically stable log(1 + e^u).
double softplus(double u);

// psi((t, y); theta) = y - g(t; theta), m = 1.
class IvResidualModel final : public MomentModel {
 public:
  explicit IvResidualModel(std::shared_ptr<const RegressionFunction> g);

  const RegressionFunction& function() const { return *g_; }
  std::shared_ptr<const RegressionFunction> function_ptr() const { return g_; }

  std::string name() const override { return "iv_residual:" + g_->name(); }
  Eigen::Index num_params() const override { return g_->num_params(); }
  Eigen::Index psi_dim() const override { return 1; }
  Eigen::Index input_dim() const override { return g_->input_dim() + 1; }
  Matrix psi(const Matrix& x, const Vector& theta) const override;
  Vector pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const override;
  Vector initial_theta(std::uint64_t seed) const override { return g_->initial_theta(seed); }

 private:
  std::shared_ptr<const RegressionFunction> g_;
};

// psi(x; theta) = x - theta; the moment equation's root is the sample mean.
class MeanModel final : public MomentModel {
 public:
  explicit MeanModel(Eigen::Index dim = 1);

  std::string name() const override { return "mean"; }
  Eigen::Index num_params() const override { return dim_; }
  Eigen::Index psi_dim() const override { return dim_; }
  Eigen::Index input_dim() const override { return dim_; }
  Matrix psi(const Matrix& x, const Vector& theta) const override;
  Vector pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const override;

 private:
  Eigen::Index dim_;
};

// Unconditional linear IV moments: x = [t (p), y, w (m)],
// psi = w * (y - t^T theta). Overidentified when m > p.
class LinearIvMoments final : public MomentModel {
 public:
  LinearIvMoments(Eigen::Index regressors, Eigen::Index instruments);

  std::string name() const override { return "linear_iv"; }
  Eigen::Index num_params() const override { return p_; }
  Eigen::Index psi_dim() const override { return m_; }
  Eigen::Index input_dim() const override { return p_ + 1 + m_; }
  Matrix psi(const Matrix& x, const Vector& theta) const override;
  Vector pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const override;

 private:
  Eigen::Index p_;
  Eigen::Index m_;
};

}  // namespace mforge
