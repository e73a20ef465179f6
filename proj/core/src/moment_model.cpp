#include "mforge/moment_model.hpp"

#include "mforge/error.hpp"

#include <cmath>

namespace mforge {

Vector MomentModel::initial_theta(std::uint64_t) const { return Vector::Zero(num_params()); }

void MomentModel::check_input(const Matrix& x, const Vector& theta) const {
  if (x.cols() != input_dim()) {
    throw InvalidInput(name() + ": input has " + std::to_string(x.cols()) + " columns, expected " +
                       std::to_string(input_dim()));
  }
  if (theta.size() != num_params()) {
    throw InvalidInput(name() + ": theta has " + std::to_string(theta.size()) +
                       " entries, expected " + std::to_string(num_params()));
  }
}

Vector MomentModel::evaluate(const Vector& x, const Vector& theta) const {
  return psi(Matrix(x.transpose()), theta).row(0).transpose();
}

Matrix MomentModel::jacobian(const Vector& x, const Vector& theta) const {
  const Matrix row = x.transpose();
  Matrix jac(num_params(), psi_dim());
  for (Eigen::Index k = 0; k < psi_dim(); ++k) {
    Matrix e = Matrix::Zero(1, psi_dim());
    e(0, k) = 1.0;
    jac.col(k) = pullback(row, theta, e);
  }
  return jac;
}

Vector RegressionFunction::initial_theta(std::uint64_t) const { return Vector::Zero(num_params()); }

Vector RegressionFunction::gradient(const Vector& t, const Vector& theta) const {
  return pullback(Matrix(t.transpose()), theta, Vector::Ones(1));
}

double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

namespace {

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

void check_function_input(const RegressionFunction& g, const Matrix& t, const Vector& theta) {
  if (t.cols() != g.input_dim() || theta.size() != g.num_params()) {
    throw InvalidInput(g.name() + ": input or parameter dimension mismatch");
  }
}

}  // namespace

Vector HeteroIvFunction::true_theta() {
  Vector th(4);
  th << 2.0, 3.0, -0.5, 3.0;
  return th;
}

Vector HeteroIvFunction::value(const Matrix& t, const Vector& theta) const {
  check_function_input(*this, t, theta);
  Vector out(t.rows());
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const double d = t(i, 0) - theta(0);
    out(i) = theta(1) + theta(2) * d + 0.5 * (theta(3) - theta(2)) * softplus(2.0 * d);
  }
  return out;
}

Vector HeteroIvFunction::pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const {
  check_function_input(*this, t, theta);
  Vector g = Vector::Zero(4);
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    const double d = t(i, 0) - theta(0);
    const double sp = softplus(2.0 * d);
    const double s = sigmoid(2.0 * d);
    const double c = cotangent(i);
    g(0) += c * (-theta(2) - (theta(3) - theta(2)) * s);
    g(1) += c;
    g(2) += c * (d - 0.5 * sp);
    g(3) += c * (0.5 * sp);
  }
  return g;
}

Vector HeteroIvFunction::initial_theta(std::uint64_t) const { return Vector::Zero(4); }

LinearFunction::LinearFunction(Eigen::Index input_dim, bool with_intercept)
    : dim_(input_dim), intercept_(with_intercept) {
  if (dim_ < 1) throw InvalidInput("linear function needs input_dim >= 1");
}

Vector LinearFunction::value(const Matrix& t, const Vector& theta) const {
  check_function_input(*this, t, theta);
  Vector out = t * theta.head(dim_);
  if (intercept_) out.array() += theta(dim_);
  return out;
}

Vector LinearFunction::pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const {
  check_function_input(*this, t, theta);
  Vector g(num_params());
  g.head(dim_) = t.transpose() * cotangent;
  if (intercept_) g(dim_) = cotangent.sum();
  return g;
}

MlpFunction::MlpFunction(Mlp net) : net_(std::move(net)) {
  if (net_.output_dim() != 1) throw InvalidInput("MLP regression function must have scalar output");
}

Vector MlpFunction::value(const Matrix& t, const Vector& theta) const {
  return net_.forward_batch(theta, t).col(0);
}

Vector MlpFunction::pullback(const Matrix& t, const Vector& theta, const Vector& cotangent) const {
  return net_.pullback_batch(theta, t, Matrix(cotangent));
}

Vector MlpFunction::initial_theta(std::uint64_t seed) const { return net_.init_params(seed); }

IvResidualModel::IvResidualModel(std::shared_ptr<const RegressionFunction> g) : g_(std::move(g)) {
  if (!g_) throw InvalidInput("IV residual model needs a regression function");
}

Matrix IvResidualModel::psi(const Matrix& x, const Vector& theta) const {
  check_input(x, theta);
  const Eigen::Index dt = g_->input_dim();
  Matrix out(x.rows(), 1);
  out.col(0) = x.col(dt) - g_->value(x.leftCols(dt), theta);
  return out;
}

Vector IvResidualModel::pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const {
  check_input(x, theta);
  const Eigen::Index dt = g_->input_dim();
  return -g_->pullback(x.leftCols(dt), theta, cotangent.col(0));
}

MeanModel::MeanModel(Eigen::Index dim) : dim_(dim) {
  if (dim_ < 1) throw InvalidInput("mean model needs dim >= 1");
}

Matrix MeanModel::psi(const Matrix& x, const Vector& theta) const {
  check_input(x, theta);
  Matrix out = x;
  out.rowwise() -= theta.transpose();
  return out;
}

Vector MeanModel::pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const {
  check_input(x, theta);
  return -cotangent.colwise().sum().transpose();
}

LinearIvMoments::LinearIvMoments(Eigen::Index regressors, Eigen::Index instruments)
    : p_(regressors), m_(instruments) {
  if (p_ < 1 || m_ < 1) throw InvalidInput("linear IV moments need >= 1 regressor and instrument");
}

Matrix LinearIvMoments::psi(const Matrix& x, const Vector& theta) const {
  check_input(x, theta);
  const Vector resid = x.col(p_) - x.leftCols(p_) * theta;
  return x.rightCols(m_).array().colwise() * resid.array();
}

Vector LinearIvMoments::pullback(const Matrix& x, const Vector& theta, const Matrix& cotangent) const {
  check_input(x, theta);
  // d psi_k / d theta = -w_k t
  const Vector weights = (x.rightCols(m_).array() * cotangent.array()).rowwise().sum();
  return -x.leftCols(p_).transpose() * weights;
}

}  // namespace mforge
