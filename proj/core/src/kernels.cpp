#include "mforge/kernels.hpp"

#include "mforge/error.hpp"
#include "mforge/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mforge {

Matrix Dataset::joint() const {
  Matrix out(x.rows(), x.cols() + z.cols());
  out << x, z;
  return out;
}

Dataset Dataset::rows(const std::vector<Eigen::Index>& idx) const {
  Dataset out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.x.resize(n, x.cols());
  out.z.resize(n, z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.x.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
    out.z.row(i) = z.row(idx[static_cast<std::size_t>(i)]);
  }
  out.x_names = x_names;
  out.z_names = z_names;
  return out;
}

Dataset Dataset::slice(Eigen::Index begin, Eigen::Index count) const {
  Dataset out;
  out.x = x.middleRows(begin, count);
  out.z = z.middleRows(begin, count);
  out.x_names = x_names;
  out.z_names = z_names;
  return out;
}

Dataset Dataset::unconditional(Matrix x) {
  Dataset out;
  out.z.resize(x.rows(), 0);
  out.x = std::move(x);
  return out;
}

KernelSpec::KernelSpec(double bandwidth_, Eigen::Index input_dim_)
    : bandwidth(bandwidth_), input_dim(input_dim_) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw InvalidInput("kernel bandwidth must be positive and finite");
  }
  if (input_dim < 1) throw InvalidInput("kernel input_dim must be >= 1");
}

double KernelSpec::operator()(const Eigen::Ref<const RowVector>& u,
                              const Eigen::Ref<const RowVector>& v) const {
  return std::exp(-(u - v).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

double median_heuristic(const Matrix& points, Eigen::Index max_rows) {
  if (points.rows() < 2) {
    throw InvalidInput("median heuristic needs at least 2 points");
  }
  if (!points.allFinite()) throw InvalidInput("median heuristic: non-finite point");

  Matrix used;
  const Matrix* p = &points;
  if (max_rows > 1 && points.rows() > max_rows) {
    used.resize(max_rows, points.cols());
    const double stride = static_cast<double>(points.rows()) / static_cast<double>(max_rows);
    for (Eigen::Index i = 0; i < max_rows; ++i) {
      used.row(i) = points.row(static_cast<Eigen::Index>(std::floor(i * stride)));
    }
    p = &used;
  }

  const Eigen::Index n = p->rows();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dist.push_back((p->row(i) - p->row(j)).norm());
    }
  }
  // Lower median for even counts would bias toward 0; use the midpoint.
  const std::size_t m = dist.size();
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m / 2), dist.end());
  double med = dist[m / 2];
  if (m % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m / 2));
    med = 0.5 * (med + lower);
  }
  if (!(med > 0.0)) {
    throw DegenerateBandwidth("median pairwise distance is zero");
  }
  return med;
}

KernelSpec median_kernel(const Matrix& points, Eigen::Index max_rows) {
  return KernelSpec(median_heuristic(points, max_rows), points.cols());
}

Matrix pairwise_sq_distances(const Matrix& a, const Matrix& b) {
  const Vector an = a.rowwise().squaredNorm();
  const Vector bn = b.rowwise().squaredNorm();
  Matrix d = (-2.0 * a * b.transpose()).eval();
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

Matrix gram(const Matrix& a, const Matrix& b, const KernelSpec& spec) {
  if (a.cols() != spec.input_dim || b.cols() != spec.input_dim) {
    throw InvalidInput("gram: column dimension " + std::to_string(a.cols()) + "/" +
                       std::to_string(b.cols()) + " does not match kernel input_dim " +
                       std::to_string(spec.input_dim));
  }
  const double inv = -1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
  Matrix g = (pairwise_sq_distances(a, b) * inv).array().exp().matrix();
  if (&a == &b) g.diagonal().setOnes();
  return g;
}

double mmd_squared(const Matrix& sample_p, const Matrix& sample_q, const KernelSpec& spec,
                   MmdEstimator estimator) {
  if (sample_p.rows() == 0 || sample_q.rows() == 0) {
    throw InvalidInput("mmd_squared: empty sample");
  }
  const Matrix kpp = gram(sample_p, sample_p, spec);
  const Matrix kqq = gram(sample_q, sample_q, spec);
  const Matrix kpq = gram(sample_p, sample_q, spec);
  const double np = static_cast<double>(sample_p.rows());
  const double nq = static_cast<double>(sample_q.rows());

  if (estimator == MmdEstimator::Unbiased) {
    if (sample_p.rows() < 2 || sample_q.rows() < 2) {
      throw InvalidInput("unbiased MMD needs at least 2 points per sample");
    }
    const double pp = (kpp.sum() - kpp.trace()) / (np * (np - 1.0));
    const double qq = (kqq.sum() - kqq.trace()) / (nq * (nq - 1.0));
    return pp + qq - 2.0 * kpq.mean();
  }
  const double v = kpp.mean() - 2.0 * kpq.mean() + kqq.mean();
  return std::max(v, 0.0);
}

RffMap::RffMap(const KernelSpec& spec, Eigen::Index num_features, std::uint64_t seed)
    : spec_(spec) {
  if (num_features < 1) throw InvalidInput("RFF: num_features must be >= 1");
  Rng rng = make_rng(seed, 0x5246);
  std::normal_distribution<double> normal(0.0, 1.0 / spec.bandwidth);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  frequencies_.resize(num_features, spec.input_dim);
  phases_.resize(num_features);
  for (Eigen::Index j = 0; j < num_features; ++j) {
    for (Eigen::Index c = 0; c < spec.input_dim; ++c) frequencies_(j, c) = normal(rng);
    phases_(j) = uniform(rng);
  }
  scale_ = std::sqrt(2.0 / static_cast<double>(num_features));
}

Vector RffMap::apply(const Eigen::Ref<const Vector>& point) const {
  if (point.size() != input_dim()) throw InvalidInput("RFF: point dimension mismatch");
  return scale_ * (frequencies_ * point + phases_).array().cos().matrix();
}

Matrix RffMap::apply_batch(const Matrix& points) const {
  if (points.cols() != input_dim()) throw InvalidInput("RFF: point dimension mismatch");
  Matrix arg = points * frequencies_.transpose();
  arg.rowwise() += phases_.transpose();
  return scale_ * arg.array().cos().matrix();
}

}  // namespace mforge
