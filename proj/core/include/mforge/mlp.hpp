#pragma once

#include "mforge/types.hpp"

#include <cstdint>
#include <vector>

namespace mforge {

// Fully connected network with leaky-ReLU hidden layers and a linear
// output layer. The network is a shape; parameters live in a flat vector
// laid out layer by layer as [W (out x in, row-major), b (out)].
class Mlp {
 public:
  Mlp() = default;
  // widths = {input, hidden..., output}; at least {input, output}.
  explicit Mlp(std::vector<Eigen::Index> widths, double leaky_slope = 0.2);

  const std::vector<Eigen::Index>& widths() const { return widths_; }
  double leaky_slope() const { return slope_; }
  Eigen::Index input_dim() const { return widths_.front(); }
  Eigen::Index output_dim() const { return widths_.back(); }
  Eigen::Index num_params() const { return num_params_; }
  std::size_t num_layers() const { return widths_.size() - 1; }

  // Uniform(-s, s) with s = 1/sqrt(fan_in) for weights and biases.
  Vector init_params(std::uint64_t seed) const;

  Vector forward(const Vector& params, const Eigen::Ref<const Vector>& input) const;
  // n x output
  Matrix forward_batch(const Vector& params, const Matrix& inputs) const;

  // Sum over rows of d/dparams <cotangent_i, net(input_i)>.
  Vector pullback_batch(const Vector& params, const Matrix& inputs,
                        const Matrix& cotangent) const;

  // Sum of squared weight-matrix entries (biases excluded).
  double weight_sq_norm(const Vector& params) const;

 private:
  struct Offsets {
    Eigen::Index weights;
    Eigen::Index bias;
  };
  void check(const Vector& params) const;

  std::vector<Eigen::Index> widths_;
  std::vector<Offsets> offsets_;
  Eigen::Index num_params_ = 0;
  double slope_ = 0.2;
};

}  // namespace mforge
