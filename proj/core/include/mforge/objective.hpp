#pragma once

#include "mforge/divergence.hpp"
#include "mforge/instrument.hpp"
#include "mforge/kernels.hpp"
#include "mforge/moment_model.hpp"

#include <memory>

namespace mforge {

struct ObjectiveConfig {
  double epsilon = 1.0;
  double lambda = 0.0;
  Divergence divergence{DivergenceKind::KL};
  // Random features of the joint (x, z) input representing f = alpha^T phi.
  std::shared_ptr<const RffMap> features;
  Eigen::Index batch_emp = 200;
  Eigen::Index batch_ref = 200;
  // KL arguments are clamped to [-kl_clip, kl_clip] before exponentiation.
  double kl_clip = 50.0;

  void validate() const;
};

// beta = (eta, f, h) with f = alpha^T phi(x, z).
struct DualState {
  double eta = 0.0;
  Vector alpha;
  Instrument instrument;

  static DualState zero(const ObjectiveConfig& cfg, Instrument h);

  Eigen::Index size() const { return 1 + alpha.size() + instrument.num_params(); }
  Vector flatten() const;
  DualState unflatten(const Vector& flat) const;
};

// Gradient with the block layout of DualState.
struct DualGradient {
  double eta = 0.0;
  Vector alpha;
  Vector instrument;

  Vector flatten() const;
};

// (x, z) rows with the feature blocks the objective needs: f-space random
// features of the joint row and the instrument basis of z.
struct Batch {
  Matrix x;
  Matrix z;
  RowMatrix features;
  RowMatrix h_basis;

  Eigen::Index size() const { return x.rows(); }
};

struct ObjectiveEval {
  double value = 0.0;
  DualGradient grad_beta;
  Vector grad_theta;
  double max_t = 0.0;
  Eigen::Index clipped = 0;
};

// Mini-batch estimate of the saddle objective
//
//   G(theta, beta) = mean_i f(x_i, z_i) + eta - |alpha|^2 / 2 - lambda/2 |h|^2
//                    - epsilon * mean_j phi*(t_j),
//   t_j = (f(x_j, z_j) + eta - psi(x_j; theta)^T h(z_j)) / epsilon,
//
// with i over the empirical batch and j over the reference batch. The
// unconditional problem is the special case of a constant instrument and
// lambda = 0. Concave in beta; LOG raises BarrierViolation if any t_j >= 1.
class KmmObjective {
 public:
  KmmObjective(std::shared_ptr<const MomentModel> model, ObjectiveConfig cfg);

  const MomentModel& model() const { return *model_; }
  std::shared_ptr<const MomentModel> model_ptr() const { return model_; }
  const ObjectiveConfig& config() const { return cfg_; }
  KmmObjective with_epsilon(double epsilon) const;
  KmmObjective with_lambda(double lambda) const;

  Batch prepare(Matrix x, Matrix z, const Instrument& h) const;

  double value(const Vector& theta, const DualState& beta, const Batch& emp, const Batch& ref) const;
  DualGradient grad_beta(const Vector& theta, const DualState& beta, const Batch& emp,
                         const Batch& ref) const;
  Vector grad_theta(const Vector& theta, const DualState& beta, const Batch& emp,
                    const Batch& ref) const;
  ObjectiveEval evaluate(const Vector& theta, const DualState& beta, const Batch& emp,
                         const Batch& ref, bool want_beta, bool want_theta) const;

  // Raw arguments t_j on the reference batch (no domain check).
  Vector arguments(const Vector& theta, const DualState& beta, const Batch& ref) const;

 private:
  std::shared_ptr<const MomentModel> model_;
  ObjectiveConfig cfg_;
};

}  // namespace mforge
