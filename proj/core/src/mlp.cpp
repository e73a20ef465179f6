#include "mforge/mlp.hpp"

#include "mforge/error.hpp"
#include "mforge/rng.hpp"

#include <cmath>

namespace mforge {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajor>;
using Weights = Eigen::Map<RowMajor>;

}  // namespace

Mlp::Mlp(std::vector<Eigen::Index> widths, double leaky_slope)
    : widths_(std::move(widths)), slope_(leaky_slope) {
  if (widths_.size() < 2) throw InvalidInput("MLP needs at least input and output widths");
  for (auto w : widths_) {
    if (w < 1) throw InvalidInput("MLP layer widths must be >= 1");
  }
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    Offsets o{offset, offset + widths_[l + 1] * widths_[l]};
    offsets_.push_back(o);
    offset = o.bias + widths_[l + 1];
  }
  num_params_ = offset;
}

void Mlp::check(const Vector& params) const {
  if (params.size() != num_params_) {
    throw InvalidInput("MLP parameter vector has " + std::to_string(params.size()) +
                       " entries, expected " + std::to_string(num_params_));
  }
}

Vector Mlp::init_params(std::uint64_t seed) const {
  Rng rng = make_rng(seed, 0x4d4c50);
  Vector params(num_params_);
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    std::uniform_real_distribution<double> u(-s, s);
    const Eigen::Index end = offsets_[l].bias + widths_[l + 1];
    for (Eigen::Index k = offsets_[l].weights; k < end; ++k) params(k) = u(rng);
  }
  return params;
}

Vector Mlp::forward(const Vector& params, const Eigen::Ref<const Vector>& input) const {
  Matrix in = input.transpose();
  return forward_batch(params, in).row(0).transpose();
}

Matrix Mlp::forward_batch(const Vector& params, const Matrix& inputs) const {
  check(params);
  if (inputs.cols() != input_dim()) throw InvalidInput("MLP input dimension mismatch");
  Matrix a = inputs;
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    ConstWeights w(params.data() + offsets_[l].weights, widths_[l + 1], widths_[l]);
    Eigen::Map<const Vector> b(params.data() + offsets_[l].bias, widths_[l + 1]);
    Matrix next = a * w.transpose();
    next.rowwise() += b.transpose();
    if (l + 1 < offsets_.size()) {
      next = next.unaryExpr([s = slope_](double v) { return v > 0.0 ? v : s * v; });
    }
    a = std::move(next);
  }
  return a;
}

Vector Mlp::pullback_batch(const Vector& params, const Matrix& inputs,
                           const Matrix& cotangent) const {
  check(params);
  if (inputs.cols() != input_dim() || cotangent.cols() != output_dim() ||
      cotangent.rows() != inputs.rows()) {
    throw InvalidInput("MLP pullback shape mismatch");
  }
  const std::size_t layers = offsets_.size();
  // Keep pre-activations for the derivative of the leaky ReLU.
  std::vector<Matrix> acts(layers + 1);
  std::vector<Matrix> pre(layers);
  acts[0] = inputs;
  for (std::size_t l = 0; l < layers; ++l) {
    ConstWeights w(params.data() + offsets_[l].weights, widths_[l + 1], widths_[l]);
    Eigen::Map<const Vector> b(params.data() + offsets_[l].bias, widths_[l + 1]);
    pre[l] = acts[l] * w.transpose();
    pre[l].rowwise() += b.transpose();
    if (l + 1 < layers) {
      acts[l + 1] = pre[l].unaryExpr([s = slope_](double v) { return v > 0.0 ? v : s * v; });
    } else {
      acts[l + 1] = pre[l];
    }
  }

  Vector grad = Vector::Zero(num_params_);
  Matrix delta = cotangent;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) {
      delta.array() *= pre[l].unaryExpr([s = slope_](double v) { return v > 0.0 ? 1.0 : s; }).array();
    }
    Weights gw(grad.data() + offsets_[l].weights, widths_[l + 1], widths_[l]);
    gw = delta.transpose() * acts[l];
    grad.segment(offsets_[l].bias, widths_[l + 1]) = delta.colwise().sum().transpose();
    if (l > 0) {
      ConstWeights w(params.data() + offsets_[l].weights, widths_[l + 1], widths_[l]);
      delta = (delta * w).eval();
    }
  }
  return grad;
}

double Mlp::weight_sq_norm(const Vector& params) const {
  check(params);
  double s = 0.0;
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    s += params.segment(offsets_[l].weights, widths_[l + 1] * widths_[l]).squaredNorm();
  }
  return s;
}

}  // namespace mforge
