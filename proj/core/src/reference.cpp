#include "mforge/reference.hpp"

#include "mforge/error.hpp"

#include <cmath>
#include <string>

namespace mforge {

std::string_view reference_kind_name(ReferenceKind kind) {
  switch (kind) {
    case ReferenceKind::Kde: return "kde";
    case ReferenceKind::Empirical: return "empirical";
    case ReferenceKind::UniformBox: return "uniform_box";
    case ReferenceKind::Mixture: return "mixture";
  }
  return "?";
}

ReferenceKind parse_reference_kind(std::string_view name) {
  if (name == "kde") return ReferenceKind::Kde;
  if (name == "empirical") return ReferenceKind::Empirical;
  if (name == "uniform_box" || name == "uniform") return ReferenceKind::UniformBox;
  if (name == "mixture") return ReferenceKind::Mixture;
  throw ConfigError("unknown reference kind '" + std::string(name) + "'", "reference.kind");
}

ReferenceMeasure ReferenceMeasure::kde(Matrix sample, double sigma, bool scale_by_std) {
  if (sample.rows() == 0) throw InvalidInput("KDE reference needs a nonempty sample");
  if (!(sigma > 0.0)) throw InvalidInput("KDE bandwidth sigma must be positive");
  ReferenceMeasure r;
  r.kind_ = ReferenceKind::Kde;
  r.sigma_ = sigma;
  r.noise_std_ = Vector::Constant(sample.cols(), sigma);
  if (scale_by_std && sample.rows() > 1) {
    const RowVector mean = sample.colwise().mean();
    const RowVector sd =
        ((sample.rowwise() - mean).array().square().colwise().sum() / double(sample.rows() - 1)).sqrt();
    for (Eigen::Index c = 0; c < sample.cols(); ++c) {
      if (sd(c) > 0.0) r.noise_std_(c) *= sd(c);
    }
  }
  r.base_ = std::move(sample);
  return r;
}

ReferenceMeasure ReferenceMeasure::empirical(Matrix sample) {
  if (sample.rows() == 0) throw InvalidInput("empirical reference needs a nonempty sample");
  ReferenceMeasure r;
  r.kind_ = ReferenceKind::Empirical;
  r.base_ = std::move(sample);
  return r;
}

ReferenceMeasure ReferenceMeasure::uniform_box(Vector lower, Vector upper) {
  if (lower.size() == 0 || lower.size() != upper.size()) {
    throw InvalidInput("uniform box bounds must be nonempty and of equal length");
  }
  if (!(lower.array() < upper.array()).all()) throw InvalidInput("uniform box needs lower < upper");
  ReferenceMeasure r;
  r.kind_ = ReferenceKind::UniformBox;
  r.lower_ = std::move(lower);
  r.upper_ = std::move(upper);
  return r;
}

ReferenceMeasure ReferenceMeasure::mixture(Matrix sample, double alpha,
                                           std::shared_ptr<const ReferenceMeasure> q) {
  if (sample.rows() == 0) throw InvalidInput("mixture reference needs a nonempty sample");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("mixture alpha must lie in [0, 1]");
  if (alpha > 0.0 && !q) throw InvalidInput("mixture with alpha > 0 needs a component Q");
  if (q && q->dim() != sample.cols()) throw InvalidInput("mixture component dimension mismatch");
  ReferenceMeasure r;
  r.kind_ = ReferenceKind::Mixture;
  r.base_ = std::move(sample);
  r.alpha_ = alpha;
  r.q_ = std::move(q);
  return r;
}

Eigen::Index ReferenceMeasure::dim() const {
  return kind_ == ReferenceKind::UniformBox ? lower_.size() : base_.cols();
}

Matrix ReferenceMeasure::sample(Eigen::Index n, std::uint64_t seed) const {
  Rng rng = make_rng(seed, 0x524546);
  return sample(n, rng);
}

Matrix ReferenceMeasure::sample(Eigen::Index n, Rng& rng) const {
  if (n < 1) throw InvalidInput("reference sample size must be >= 1");
  const Eigen::Index d = dim();
  Matrix out(n, d);
  std::uniform_int_distribution<Eigen::Index> pick(0, std::max<Eigen::Index>(base_.rows() - 1, 0));
  switch (kind_) {
    case ReferenceKind::Empirical:
      for (Eigen::Index i = 0; i < n; ++i) out.row(i) = base_.row(pick(rng));
      break;
    case ReferenceKind::Kde: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        out.row(i) = base_.row(pick(rng));
        for (Eigen::Index c = 0; c < d; ++c) out(i, c) += noise_std_(c) * normal(rng);
      }
      break;
    }
    case ReferenceKind::UniformBox: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < d; ++c) out(i, c) = lower_(c) + (upper_(c) - lower_(c)) * u(rng);
      }
      break;
    }
    case ReferenceKind::Mixture: {
      std::bernoulli_distribution from_q(alpha_);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (alpha_ > 0.0 && from_q(rng)) {
          out.row(i) = q_->sample(1, rng).row(0);
        } else {
          out.row(i) = base_.row(pick(rng));
        }
      }
      break;
    }
  }
  return out;
}

Matrix ReferenceMeasure::stratified_sample(Eigen::Index n, Rng& rng) const {
  if (kind_ == ReferenceKind::Empirical) return base_;
  if (kind_ != ReferenceKind::Kde) return sample(n, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out = base_;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(i, c) += noise_std_(c) * normal(rng);
  return out;
}

}  // namespace mforge
