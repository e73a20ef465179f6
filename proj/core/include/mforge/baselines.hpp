#pragma once

#include "mforge/divergence.hpp"
#include "mforge/kernels.hpp"
#include "mforge/moment_model.hpp"

#include <optional>

namespace mforge {

struct MinimizeOptions {
  int max_iterations = 2000;
  double function_tolerance = 1e-14;
  double gradient_tolerance = 1e-12;
  double parameter_tolerance = 1e-14;
};

// Minimizes (1/n) sum_i |psi(x_i; theta)|^2, ignoring z.
Vector ols_fit(const MomentModel& model, const Dataset& data, const Vector& theta0,
               const MinimizeOptions& opts = {});
double ols_objective(const MomentModel& model, const Vector& theta, const Dataset& data);

// Continuous-updating GMM: minimizes gbar^T (Omega(theta) + ridge I)^{-1} gbar
// with gbar = mean psi_i and Omega = mean psi_i psi_i^T.
struct CuGmmOptions {
  double ridge = 1e-8;
  MinimizeOptions minimize;
};
Vector cu_gmm_fit(const MomentModel& model, const Dataset& data, const Vector& theta0,
                  const CuGmmOptions& opts = {});
double cu_gmm_objective(const MomentModel& model, const Vector& theta, const Dataset& data,
                        double ridge = 1e-8);

// Finite-sample GEL dual of the phi-divergence profile:
//   P(theta) = sup_{eta, h} eta - (1/n) sum_i phi*(eta - h^T psi_i).
struct GelInner {
  double value = 0.0;
  double eta = 0.0;
  Vector h;
  Vector weights;  // implied p_i = phi*'(eta - h^T psi_i) / n
  int newton_steps = 0;
};
GelInner gel_inner(const Matrix& psi, const Divergence& divergence);

struct GelResult {
  Vector theta;
  GelInner inner;
};
GelResult chi2_gel_fit(const MomentModel& model, const Dataset& data, const Vector& theta0,
                       const MinimizeOptions& opts = {});

// V-statistic (1/n^2) sum_ij psi_i^T K(z_i, z_j) psi_j, K on the
// conditioning variable. Nonnegative for PSD K.
double mmr_objective(const MomentModel& model, const Vector& theta, const Dataset& data,
                     const KernelSpec& kernel);
Vector mmr_fit(const MomentModel& model, const Dataset& data, const KernelSpec& kernel,
               const Vector& theta0, const MinimizeOptions& opts = {});

// Finitely constrained dual of the unregularized MMD profile:
//   sup_{a, eta, h}  mean_i (F_data a)_i + eta - a^T Q a / 2
//   s.t.            (F_grid a)_j + eta <= h^T psi_j   for every grid point j,
// where f = sum_k a_k b_k in some basis with Gram Q, F_* evaluate the basis
// at data / grid points, and psi_j = psi(grid_j; theta). Solved by a
// primal log-barrier Newton method driven to `tolerance` duality gap.
struct ConstrainedDual {
  Matrix f_data;
  Matrix f_grid;
  Matrix norm;
  Matrix psi_grid;
  std::optional<Vector> fixed_h;
  // A feasible dual value above this bound certifies primal infeasibility.
  double value_bound = 2.0;
};

struct ConstrainedDualSolution {
  double value = 0.0;  // +inf when the primal is infeasible
  bool feasible = true;
  Vector coef;
  double eta = 0.0;
  Vector h;
  int newton_steps = 0;
};

ConstrainedDualSolution solve_constrained_dual(const ConstrainedDual& problem, double tolerance = 1e-10);

struct ExactProfile {
  double value = 0.0;  // R(theta); +inf when infeasible
  ConstrainedDualSolution dual;
  Matrix grid;
  Matrix centers;
  // max over the audit grid of f(x) + eta - h^T psi(x; theta); 0 if no audit grid.
  double audit_violation = 0.0;
};

// Data rows plus `extra` uniform points over the bounding box inflated by
// `inflate` on each side (evenly spaced in 1-D, seeded draws otherwise).
Matrix default_constraint_grid(const Matrix& data, Eigen::Index extra = 256, double inflate = 0.2,
                               std::uint64_t seed = 0);

// Unregularized MMD profile R(theta) for an unconditional model, with f in
// the span of kernel sections at grid and data points.
ExactProfile exact_mmd_profile(const MomentModel& model, const Vector& theta, const Dataset& data,
                               const Matrix& constraint_grid, const KernelSpec& kernel,
                               const Matrix& audit_grid = Matrix(), double tolerance = 1e-10);

}  // namespace mforge
