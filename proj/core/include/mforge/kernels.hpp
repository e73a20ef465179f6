#pragma once

#include "mforge/types.hpp"

#include <cstdint>

namespace mforge {

// Gaussian RBF kernel k(u, v) = exp(-|u - v|^2 / (2 bandwidth^2)).
struct KernelSpec {
  double bandwidth = 1.0;
  Eigen::Index input_dim = 1;

  KernelSpec() = default;
  KernelSpec(double bandwidth, Eigen::Index input_dim);

  double operator()(const Eigen::Ref<const RowVector>& u,
                    const Eigen::Ref<const RowVector>& v) const;
};

// Median of pairwise Euclidean distances over distinct row pairs.
// At most `max_rows` rows (evenly strided) are used; 0 means all.
double median_heuristic(const Matrix& points, Eigen::Index max_rows = 0);

// Kernel spec with median-heuristic bandwidth for `points`.
KernelSpec median_kernel(const Matrix& points, Eigen::Index max_rows = 2000);

Matrix pairwise_sq_distances(const Matrix& a, const Matrix& b);

Matrix gram(const Matrix& a, const Matrix& b, const KernelSpec& spec);

enum class MmdEstimator { Biased, Unbiased };

// Squared MMD. The biased V-statistic is clamped at 0; the unbiased
// U-statistic is a diagnostic and may be negative.
double mmd_squared(const Matrix& sample_p, const Matrix& sample_q,
                   const KernelSpec& spec,
                   MmdEstimator estimator = MmdEstimator::Biased);

// Random Fourier features phi_j(u) = scale * cos(w_j^T u + b_j) with
// scale = sqrt(2 / d), w_j ~ N(0, I / bandwidth^2), b_j ~ U[0, 2 pi).
// Immutable after construction.
class RffMap {
 public:
  RffMap() = default;
  RffMap(const KernelSpec& spec, Eigen::Index num_features, std::uint64_t seed);

  Eigen::Index num_features() const { return phases_.size(); }
  Eigen::Index input_dim() const { return frequencies_.cols(); }
  double scale() const { return scale_; }
  const Matrix& frequencies() const { return frequencies_; }
  const Vector& phases() const { return phases_; }
  const KernelSpec& kernel() const { return spec_; }

  Vector apply(const Eigen::Ref<const Vector>& point) const;
  // One feature row per input row (n x d).
  Matrix apply_batch(const Matrix& points) const;

 private:
  KernelSpec spec_;
  Matrix frequencies_;  // d x input_dim
  Vector phases_;       // d
  double scale_ = 0.0;
};

}  // namespace mforge
