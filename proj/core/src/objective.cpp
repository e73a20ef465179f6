#include "mforge/objective.hpp"

#include "mforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace mforge {

void ObjectiveConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidInput("objective: epsilon must be positive");
  if (!(lambda >= 0.0)) throw InvalidInput("objective: lambda must be nonnegative");
  if (!features) throw InvalidInput("objective: missing f-space feature map");
  if (batch_emp < 0 || batch_ref < 0) throw InvalidInput("objective: batch sizes must be nonnegative");
}

DualState DualState::zero(const ObjectiveConfig& cfg, Instrument h) {
  DualState s;
  s.alpha = Vector::Zero(cfg.features->num_features());
  s.instrument = std::move(h);
  return s;
}

Vector DualState::flatten() const {
  Vector out(size());
  out(0) = eta;
  out.segment(1, alpha.size()) = alpha;
  out.tail(instrument.num_params()) = instrument.params();
  return out;
}

DualState DualState::unflatten(const Vector& flat) const {
  if (flat.size() != size()) throw InvalidInput("dual state size mismatch");
  DualState s;
  s.eta = flat(0);
  s.alpha = flat.segment(1, alpha.size());
  s.instrument = instrument.with_params(flat.tail(instrument.num_params()));
  return s;
}

Vector DualGradient::flatten() const {
  Vector out(1 + alpha.size() + instrument.size());
  out(0) = eta;
  out.segment(1, alpha.size()) = alpha;
  out.tail(instrument.size()) = instrument;
  return out;
}

KmmObjective::KmmObjective(std::shared_ptr<const MomentModel> model, ObjectiveConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)) {
  if (!model_) throw InvalidInput("objective: missing moment model");
  cfg_.validate();
}

KmmObjective KmmObjective::with_epsilon(double epsilon) const {
  ObjectiveConfig c = cfg_;
  c.epsilon = epsilon;
  return KmmObjective(model_, c);
}

KmmObjective KmmObjective::with_lambda(double lambda) const {
  ObjectiveConfig c = cfg_;
  c.lambda = lambda;
  return KmmObjective(model_, c);
}

Batch KmmObjective::prepare(Matrix x, Matrix z, const Instrument& h) const {
  if (x.rows() == 0) throw InvalidInput("objective: empty batch");
  if (x.rows() != z.rows()) throw InvalidInput("objective: x and z row counts differ");
  Batch b;
  Matrix joint(x.rows(), x.cols() + z.cols());
  joint << x, z;
  b.features = cfg_.features->apply_batch(joint);
  b.h_basis = h.basis(z);
  b.x = std::move(x);
  b.z = std::move(z);
  return b;
}

Vector KmmObjective::arguments(const Vector& theta, const DualState& beta, const Batch& ref) const {
  const Matrix psi = model_->psi(ref.x, theta);
  const Matrix hz = beta.instrument.evaluate_basis(ref.h_basis, ref.size());
  const Vector pairing = (psi.array() * hz.array()).rowwise().sum();
  Vector t = ref.features * beta.alpha;
  t.array() += beta.eta;
  t -= pairing;
  return t / cfg_.epsilon;
}

ObjectiveEval KmmObjective::evaluate(const Vector& theta, const DualState& beta, const Batch& emp,
                                     const Batch& ref, bool want_beta, bool want_theta) const {
  if (emp.size() == 0 || ref.size() == 0) throw InvalidInput("objective: empty batch");
  if (beta.alpha.size() != cfg_.features->num_features()) {
    throw InvalidInput("objective: alpha has wrong length");
  }
  const Divergence& div = cfg_.divergence;
  const double eps = cfg_.epsilon;
  const double nref = static_cast<double>(ref.size());

  const Matrix psi = model_->psi(ref.x, theta);
  const Matrix hz = beta.instrument.evaluate_basis(ref.h_basis, ref.size());
  Vector t = ref.features * beta.alpha;
  t.array() += beta.eta;
  t -= (psi.array() * hz.array()).rowwise().sum().matrix();
  t /= eps;

  ObjectiveEval out;
  out.max_t = t.maxCoeff();
  if (div.kind() == DivergenceKind::Log && !(out.max_t < 1.0)) throw BarrierViolation(out.max_t);

  if (div.kind() == DivergenceKind::KL) {
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      if (std::abs(t(j)) > cfg_.kl_clip) {
        t(j) = std::clamp(t(j), -cfg_.kl_clip, cfg_.kl_clip);
        ++out.clipped;
      }
    }
  }

  double conj_sum = 0.0;
  Vector w(t.size());  // phi*'(t_j) / n_ref
  for (Eigen::Index j = 0; j < t.size(); ++j) {
    conj_sum += div.conjugate(t(j));
    w(j) = div.conjugate_d1(t(j)) / nref;
  }

  const RowVector emp_mean_features = emp.features.colwise().mean();
  const double h_sq = beta.instrument.squared_norm();
  out.value = emp_mean_features.dot(beta.alpha) + beta.eta - 0.5 * beta.alpha.squaredNorm() -
              0.5 * cfg_.lambda * h_sq - eps * conj_sum / nref;
  if (!std::isfinite(out.value)) throw Diverged("objective evaluated to a non-finite value");

  if (want_beta) {
    out.grad_beta.eta = 1.0 - w.sum();
    out.grad_beta.alpha = emp_mean_features.transpose() - beta.alpha - ref.features.transpose() * w;
    const Matrix weighted_psi = psi.array().colwise() * w.array();
    out.grad_beta.instrument = beta.instrument.pairing_gradient(ref.h_basis, weighted_psi) -
                               cfg_.lambda * beta.instrument.params();
  }
  if (want_theta) {
    const Matrix cot = hz.array().colwise() * w.array();
    out.grad_theta = model_->pullback(ref.x, theta, cot);
  }
  return out;
}

double KmmObjective::value(const Vector& theta, const DualState& beta, const Batch& emp,
                           const Batch& ref) const {
  return evaluate(theta, beta, emp, ref, false, false).value;
}

DualGradient KmmObjective::grad_beta(const Vector& theta, const DualState& beta, const Batch& emp,
                                     const Batch& ref) const {
  return evaluate(theta, beta, emp, ref, true, false).grad_beta;
}

Vector KmmObjective::grad_theta(const Vector& theta, const DualState& beta, const Batch& emp,
                                const Batch& ref) const {
  return evaluate(theta, beta, emp, ref, false, true).grad_theta;
}

}  // namespace mforge
