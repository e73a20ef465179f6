#pragma once

#include "mforge/rng.hpp"
#include "mforge/types.hpp"

#include <cstdint>
#include <memory>
#include <string_view>

namespace mforge {

enum class ReferenceKind { Kde, Empirical, UniformBox, Mixture };

std::string_view reference_kind_name(ReferenceKind kind);
ReferenceKind parse_reference_kind(std::string_view name);

inline constexpr double kDefaultKdeSigma = 0.1;

// Reference distribution omega over joint (x, z) rows. Immutable after
// construction; every draw takes an explicit seed or generator.
class ReferenceMeasure {
 public:
  // Equal-weight Gaussian KDE on `sample`. With `scale_by_std` the noise
  // of each coordinate is sigma times that coordinate's sample std.
  static ReferenceMeasure kde(Matrix sample, double sigma = kDefaultKdeSigma,
                              bool scale_by_std = false);
  static ReferenceMeasure empirical(Matrix sample);
  static ReferenceMeasure uniform_box(Vector lower, Vector upper);
  // (1 - alpha) * empirical(sample) + alpha * q
  static ReferenceMeasure mixture(Matrix sample, double alpha,
                                  std::shared_ptr<const ReferenceMeasure> q);

  ReferenceKind kind() const { return kind_; }
  Eigen::Index dim() const;
  const Matrix& base_sample() const { return base_; }
  double sigma() const { return sigma_; }
  double alpha() const { return alpha_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }

  Matrix sample(Eigen::Index n, std::uint64_t seed) const;
  Matrix sample(Eigen::Index n, Rng& rng) const;
  // KDE and empirical: every base row exactly once (KDE adds fresh kernel
  // noise), so the draw's mean tracks the sample mean without resampling
  // error. Other kinds fall back to sample(base size or n).
  Matrix stratified_sample(Eigen::Index n, Rng& rng) const;

 private:
  ReferenceKind kind_ = ReferenceKind::Empirical;
  Matrix base_;
  Vector noise_std_;
  double sigma_ = 0.0;
  double alpha_ = 0.0;
  Vector lower_, upper_;
  std::shared_ptr<const ReferenceMeasure> q_;
};

}  // namespace mforge
