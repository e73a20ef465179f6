#include "mforge/baselines.hpp"

#include "mforge/error.hpp"
#include "mforge/rng.hpp"

#include <ceres/ceres.h>

#include <cmath>
#include <functional>
#include <limits>
#include <set>

namespace mforge {

namespace {

using ValueAndGradient = std::function<double(const Vector& x, Vector* grad)>;

class FirstOrderAdapter final : public ceres::FirstOrderFunction {
 public:
  FirstOrderAdapter(ValueAndGradient fn, int n) : fn_(std::move(fn)), n_(n) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const Vector x = Eigen::Map<const Vector>(parameters, n_);
    Vector g;
    double v = 0.0;
    try {
      v = fn_(x, gradient ? &g : nullptr);
    } catch (const Error&) {
      return false;
    }
    if (!std::isfinite(v)) return false;
    *cost = v;
    if (gradient) {
      if (!g.allFinite()) return false;
      Eigen::Map<Vector>(gradient, n_) = g;
    }
    return true;
  }
  int NumParameters() const override { return n_; }

 private:
  ValueAndGradient fn_;
  int n_;
};

Vector minimize(const ValueAndGradient& fn, const Vector& x0, const MinimizeOptions& opts) {
  Vector x = x0;
  ceres::GradientProblem problem(new FirstOrderAdapter(fn, static_cast<int>(x.size())));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = opts.max_iterations;
  options.function_tolerance = opts.function_tolerance;
  options.gradient_tolerance = opts.gradient_tolerance;
  options.parameter_tolerance = opts.parameter_tolerance;
  options.logging_type = ceres::SILENT;
  options.minimizer_progress_to_stdout = false;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, x.data(), &summary);
  if (summary.termination_type == ceres::FAILURE || !x.allFinite()) {
    throw Diverged("minimization failed: " + summary.message);
  }
  return x;
}

void check_unconditional_use(const MomentModel& model, const Dataset& data) {
  if (data.size() == 0) throw InvalidInput(model.name() + ": empty dataset");
  if (data.x_dim() != model.input_dim()) throw InvalidInput(model.name() + ": dataset x dimension mismatch");
}

}  // namespace

double ols_objective(const MomentModel& model, const Vector& theta, const Dataset& data) {
  return model.psi(data.x, theta).squaredNorm() / static_cast<double>(data.size());
}

Vector ols_fit(const MomentModel& model, const Dataset& data, const Vector& theta0,
               const MinimizeOptions& opts) {
  check_unconditional_use(model, data);
  const double n = static_cast<double>(data.size());
  return minimize(
      [&](const Vector& theta, Vector* grad) {
        const Matrix psi = model.psi(data.x, theta);
        if (grad) *grad = model.pullback(data.x, theta, psi) * (2.0 / n);
        return psi.squaredNorm() / n;
      },
      theta0, opts);
}

namespace {

struct CuParts {
  double value;
  Vector a;  // (Omega + ridge)^{-1} gbar
  Matrix psi;
};

CuParts cu_parts(const MomentModel& model, const Vector& theta, const Dataset& data, double ridge) {
  const double n = static_cast<double>(data.size());
  CuParts p;
  p.psi = model.psi(data.x, theta);
  const Vector gbar = p.psi.colwise().mean().transpose();
  Matrix omega = p.psi.transpose() * p.psi / n;
  omega.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(omega);
  if (llt.info() != Eigen::Success) throw InvalidInput("CU-GMM: singular moment covariance after ridge");
  p.a = llt.solve(gbar);
  p.value = gbar.dot(p.a);
  return p;
}

}  // namespace

double cu_gmm_objective(const MomentModel& model, const Vector& theta, const Dataset& data, double ridge) {
  return cu_parts(model, theta, data, ridge).value;
}

Vector cu_gmm_fit(const MomentModel& model, const Dataset& data, const Vector& theta0,
                  const CuGmmOptions& opts) {
  check_unconditional_use(model, data);
  if (model.psi_dim() < model.num_params()) throw InvalidInput("CU-GMM needs m >= p");
  const double n = static_cast<double>(data.size());
  return minimize(
      [&](const Vector& theta, Vector* grad) {
        const CuParts p = cu_parts(model, theta, data, opts.ridge);
        if (grad) {
          // grad Q = (2/n) sum_i J_i a (1 - a^T psi_i)
          const Vector s = (Vector::Ones(p.psi.rows()) - p.psi * p.a) * (2.0 / n);
          const Matrix cot = s * p.a.transpose();
          *grad = model.pullback(data.x, theta, cot);
        }
        return p.value;
      },
      theta0, opts.minimize);
}

GelInner gel_inner(const Matrix& psi, const Divergence& div) {
  const Eigen::Index n = psi.rows();
  const Eigen::Index m = psi.cols();
  if (n == 0) throw InvalidInput("GEL: empty sample");
  const double dn = static_cast<double>(n);

  Vector u = Vector::Zero(m + 1);  // (eta, h)
  auto value_at = [&](const Vector& x) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += div.conjugate(x(0) - psi.row(i).dot(x.tail(m)));
    return x(0) - s / dn;
  };

  GelInner out;
  double value = value_at(u);
  for (int it = 0; it < 100; ++it) {
    Vector g = Vector::Zero(m + 1);
    Matrix neg_h = Matrix::Zero(m + 1, m + 1);
    Vector row(m + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = u(0) - psi.row(i).dot(u.tail(m));
      const double d1 = div.conjugate_d1(v);
      const double d2 = div.conjugate_d2(v);
      row(0) = 1.0;
      row.tail(m) = -psi.row(i).transpose();
      g -= d1 * row;
      neg_h.noalias() += d2 * row * row.transpose();
    }
    g /= dn;
    g(0) += 1.0;
    neg_h /= dn;
    if (g.norm() < 1e-13) break;

    Eigen::LDLT<Matrix> ldlt(neg_h);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-14).all()) {
      throw Diverged("GEL inner problem is not strictly concave (degenerate moments)");
    }
    const Vector d = ldlt.solve(g);
    double step = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector cand = u + step * d;
      double v = -std::numeric_limits<double>::infinity();
      try {
        v = value_at(cand);
      } catch (const DomainError&) {
      }
      if (std::isfinite(v) && v >= value + 1e-4 * step * g.dot(d)) {
        u = cand;
        value = v;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    ++out.newton_steps;
    if (!moved) break;
    if (!std::isfinite(value) || std::abs(value) > 1e12) throw Diverged("GEL inner maximization diverged");
  }

  out.value = value;
  out.eta = u(0);
  out.h = u.tail(m);
  out.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.weights(i) = div.conjugate_d1(out.eta - psi.row(i).dot(out.h)) / dn;
  }
  return out;
}

GelResult chi2_gel_fit(const MomentModel& model, const Dataset& data, const Vector& theta0,
                       const MinimizeOptions& opts) {
  check_unconditional_use(model, data);
  if (model.psi_dim() < model.num_params()) throw InvalidInput("chi2-GEL needs m >= p");
  const Divergence chi2(DivergenceKind::Chi2);
  GelResult res;
  res.theta = minimize(
      [&](const Vector& theta, Vector* grad) {
        const Matrix psi = model.psi(data.x, theta);
        const GelInner inner = gel_inner(psi, chi2);
        if (grad) {
          // Envelope theorem: d/dtheta = sum_i p_i J_i h
          const Matrix cot = inner.weights * inner.h.transpose();
          *grad = model.pullback(data.x, theta, cot);
        }
        return inner.value;
      },
      theta0, opts);
  res.inner = gel_inner(model.psi(data.x, res.theta), chi2);
  return res;
}

double mmr_objective(const MomentModel& model, const Vector& theta, const Dataset& data,
                     const KernelSpec& kernel) {
  if (data.z_dim() == 0) throw InvalidInput("MMR needs a conditioning variable");
  const Matrix k = gram(data.z, data.z, kernel);
  const Matrix psi = model.psi(data.x, theta);
  const double n = static_cast<double>(data.size());
  return (psi.transpose() * k * psi).trace() / (n * n);
}

Vector mmr_fit(const MomentModel& model, const Dataset& data, const KernelSpec& kernel,
               const Vector& theta0, const MinimizeOptions& opts) {
  if (data.z_dim() == 0) throw InvalidInput("MMR needs a conditioning variable");
  const Matrix k = gram(data.z, data.z, kernel);
  const double n = static_cast<double>(data.size());
  return minimize(
      [&](const Vector& theta, Vector* grad) {
        const Matrix psi = model.psi(data.x, theta);
        const Matrix kpsi = k * psi;
        if (grad) *grad = model.pullback(data.x, theta, kpsi) * (2.0 / (n * n));
        return (psi.transpose() * kpsi).trace() / (n * n);
      },
      theta0, opts);
}

ConstrainedDualSolution solve_constrained_dual(const ConstrainedDual& p, double tolerance) {
  const Eigen::Index nb = p.norm.rows();
  const Eigen::Index ng = p.f_grid.rows();
  const bool free_h = !p.fixed_h.has_value();
  const Eigen::Index m = p.psi_grid.cols();
  const Eigen::Index nh = free_h ? m : 0;
  const Eigen::Index dim = nb + 1 + nh;
  if (p.f_data.cols() != nb || p.f_grid.cols() != nb || p.psi_grid.rows() != ng || ng == 0) {
    throw InvalidInput("constrained dual: inconsistent problem shapes");
  }
  if (!free_h && p.fixed_h->size() != m) throw InvalidInput("constrained dual: fixed h has wrong size");

  // s = b - A x > 0 with x = (a, eta, h).
  Matrix a_mat(ng, dim);
  a_mat.leftCols(nb) = p.f_grid;
  a_mat.col(nb).setOnes();
  if (free_h) a_mat.rightCols(m) = -p.psi_grid;
  const Vector b = free_h ? Vector::Zero(ng) : Vector(p.psi_grid * *p.fixed_h);

  Vector c = Vector::Zero(dim);
  c.head(nb) = p.f_data.colwise().mean().transpose();
  c(nb) = 1.0;

  auto objective = [&](const Vector& x) {
    const Vector a = x.head(nb);
    return c.dot(x) - 0.5 * a.dot(p.norm * a);
  };

  Vector x = Vector::Zero(dim);
  x(nb) = b.minCoeff() - 1.0;

  ConstrainedDualSolution sol;
  auto finish = [&](bool feasible) {
    sol.feasible = feasible;
    sol.value = feasible ? objective(x) : std::numeric_limits<double>::infinity();
    sol.coef = x.head(nb);
    sol.eta = x(nb);
    sol.h = free_h ? Vector(x.tail(m)) : *p.fixed_h;
    return sol;
  };

  double tau = 1.0;
  const double gn = static_cast<double>(ng);
  while (true) {
    for (int it = 0; it < 200; ++it) {
      const Vector s = b - a_mat * x;
      const Vector inv_s = s.cwiseInverse();
      Vector grad = tau * c - a_mat.transpose() * inv_s;
      grad.head(nb) -= tau * (p.norm * x.head(nb));
      Matrix neg_hess = a_mat.transpose() * inv_s.cwiseAbs2().asDiagonal() * a_mat;
      neg_hess.topLeftCorner(nb, nb) += tau * p.norm;
      neg_hess.diagonal().array() += 1e-12 * (1.0 + neg_hess.diagonal().array().abs());
      Eigen::LDLT<Matrix> ldlt(neg_hess);
      const Vector dx = ldlt.solve(grad);
      const double decrement = grad.dot(dx);
      ++sol.newton_steps;
      if (!(decrement > 1e-14)) break;

      auto barrier = [&](const Vector& y) {
        const Vector sy = b - a_mat * y;
        if ((sy.array() <= 0.0).any()) return -std::numeric_limits<double>::infinity();
        return tau * objective(y) + sy.array().log().sum();
      };
      const double f0 = barrier(x);
      double step = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 80; ++ls) {
        const Vector y = x + step * dx;
        const double fy = barrier(y);
        if (std::isfinite(fy) && fy >= f0 + 0.25 * step * decrement) {
          x = y;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
      if (objective(x) > p.value_bound + 1e-9) return finish(false);
      if (decrement < 1e-13) break;
    }
    if (gn / tau < tolerance) break;
    tau *= 10.0;
  }
  return finish(true);
}

Matrix default_constraint_grid(const Matrix& data, Eigen::Index extra, double inflate, std::uint64_t seed) {
  if (data.rows() == 0) throw InvalidInput("constraint grid needs data");
  const RowVector lo = data.colwise().minCoeff();
  const RowVector hi = data.colwise().maxCoeff();
  const RowVector span = (hi - lo).cwiseMax(1e-12);
  const RowVector glo = lo - inflate * span;
  const RowVector ghi = hi + inflate * span;
  Matrix grid(data.rows() + extra, data.cols());
  grid.topRows(data.rows()) = data;
  if (data.cols() == 1) {
    for (Eigen::Index k = 0; k < extra; ++k) {
      const double frac = extra == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(extra - 1);
      grid(data.rows() + k, 0) = glo(0) + frac * (ghi(0) - glo(0));
    }
  } else {
    Rng rng = make_rng(seed, 0x47524944);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index k = 0; k < extra; ++k) {
      for (Eigen::Index c = 0; c < data.cols(); ++c) {
        grid(data.rows() + k, c) = glo(c) + u(rng) * (ghi(c) - glo(c));
      }
    }
  }
  return grid;
}

namespace {

Matrix unique_rows(const Matrix& m) {
  std::vector<Eigen::Index> keep;
  std::set<std::vector<double>> seen;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> key(m.row(i).data(), m.row(i).data() + 0);
    key.resize(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) key[static_cast<std::size_t>(c)] = m(i, c);
    if (seen.insert(key).second) keep.push_back(i);
  }
  Matrix out(static_cast<Eigen::Index>(keep.size()), m.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(keep[k]);
  return out;
}

}  // namespace

ExactProfile exact_mmd_profile(const MomentModel& model, const Vector& theta, const Dataset& data,
                               const Matrix& constraint_grid, const KernelSpec& kernel,
                               const Matrix& audit_grid, double tolerance) {
  check_unconditional_use(model, data);
  if (constraint_grid.cols() != data.x_dim()) throw InvalidInput("constraint grid dimension mismatch");

  ExactProfile out;
  out.grid = constraint_grid;
  Matrix stacked(constraint_grid.rows() + data.size(), data.x_dim());
  stacked << constraint_grid, data.x;
  out.centers = unique_rows(stacked);

  // Whitened eigenbasis of the center Gram, truncated at its numerical
  // rank: f = sum_k c_k u_k with u_k orthonormal in the RKHS, so the
  // norm matrix is the identity.
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(gram(out.centers, out.centers, kernel));
  const Vector& lam = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(lam.maxCoeff(), 1e-300);
  std::vector<Eigen::Index> kept;
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (lam(k) > cutoff) kept.push_back(k);
  Matrix whiten(out.centers.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    whiten.col(static_cast<Eigen::Index>(k)) = eig.eigenvectors().col(kept[k]) / std::sqrt(lam(kept[k]));
  }

  ConstrainedDual problem;
  problem.norm = Matrix::Identity(whiten.cols(), whiten.cols());
  problem.f_data = gram(data.x, out.centers, kernel) * whiten;
  problem.f_grid = gram(constraint_grid, out.centers, kernel) * whiten;
  problem.psi_grid = model.psi(constraint_grid, theta);
  problem.value_bound = 2.0;
  out.dual = solve_constrained_dual(problem, tolerance);
  out.dual.coef = whiten * out.dual.coef;
  out.value = out.dual.value;

  if (audit_grid.rows() > 0 && out.dual.feasible) {
    const Vector f = gram(audit_grid, out.centers, kernel) * out.dual.coef;
    const Vector rhs = model.psi(audit_grid, theta) * out.dual.h;
    out.audit_violation = (f.array() + out.dual.eta - rhs.array()).maxCoeff();
  }
  return out;
}

}  // namespace mforge
