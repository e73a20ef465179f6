#include "mforge/optimizer.hpp"

#include "mforge/error.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mforge {

std::string_view update_rule_name(UpdateRule rule) {
  switch (rule) {
    case UpdateRule::Sgd: return "sgd";
    case UpdateRule::Momentum: return "momentum";
    case UpdateRule::OptimisticSgd: return "optimistic_sgd";
    case UpdateRule::Adam: return "adam";
    case UpdateRule::OptimisticAdam: return "optimistic_adam";
  }
  return "?";
}

UpdateRule parse_update_rule(std::string_view name) {
  if (name == "sgd") return UpdateRule::Sgd;
  if (name == "momentum") return UpdateRule::Momentum;
  if (name == "optimistic_sgd" || name == "optimistic") return UpdateRule::OptimisticSgd;
  if (name == "adam") return UpdateRule::Adam;
  if (name == "optimistic_adam") return UpdateRule::OptimisticAdam;
  throw ConfigError("unknown update rule '" + std::string(name) + "'", "optimizer.rule");
}

double anneal_schedule(const AnnealSchedule& s, long iteration) {
  if (iteration < 0) throw InvalidInput("anneal_schedule: iteration must be >= 0");
  if (s.gamma >= 1.0) return std::max(s.floor, s.initial);
  return std::max(s.floor, s.initial * std::pow(s.gamma, static_cast<double>(iteration)));
}

Stepper::Stepper(UpdateRule rule, double lr, Params params) : rule_(rule), lr_(lr), p_(params) {
  if (!(lr > 0.0)) throw InvalidInput("learning rate must be positive");
}

Vector Stepper::step(const Vector& g) {
  ++t_;
  if (prev_.size() != g.size()) {
    prev_ = Vector::Zero(g.size());
    m_ = Vector::Zero(g.size());
    v_ = Vector::Zero(g.size());
  }
  switch (rule_) {
    case UpdateRule::Sgd: return lr_ * g;
    case UpdateRule::Momentum:
      prev_ = p_.momentum * prev_ + g;
      return lr_ * prev_;
    case UpdateRule::OptimisticSgd: {
      // g_k + (g_k - g_{k-1}); the first step has no history.
      Vector d = (t_ == 1) ? g : Vector(2.0 * g - prev_);
      prev_ = g;
      return lr_ * d;
    }
    case UpdateRule::Adam:
    case UpdateRule::OptimisticAdam: {
      m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * g;
      v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(p_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(p_.beta2, static_cast<double>(t_));
      Vector u = (m_ / c1).array() / ((v_ / c2).array().sqrt() + p_.adam_eps);
      if (rule_ == UpdateRule::Adam) return lr_ * u;
      Vector d = (t_ == 1) ? u : Vector(2.0 * u - prev_);
      prev_ = u;
      return lr_ * d;
    }
  }
  return Vector::Zero(g.size());
}

void GdaConfig::validate() const {
  if (!(lr_theta > 0.0) || !(lr_beta > 0.0)) throw InvalidInput("GDA: learning rates must be positive");
  if (max_iters < 0) throw InvalidInput("GDA: max_iters must be >= 0");
  if (inner_steps < 1) throw InvalidInput("GDA: inner_steps must be >= 1");
  if (eval_every < 1) throw InvalidInput("GDA: eval_every must be >= 1");
  if (anneal && !(anneal->gamma > 0.0 && anneal->gamma <= 1.0)) {
    throw InvalidInput("GDA: anneal gamma must lie in (0, 1]");
  }
  if (anneal && !(anneal->initial > 0.0)) throw InvalidInput("GDA: anneal initial epsilon must be positive");
}

std::string format_progress(const TracePoint& p) {
  std::ostringstream os;
  os.precision(10);
  os << p.iteration << '\t' << p.objective << '\t' << p.metric << '\t' << p.epsilon;
  return os.str();
}

namespace {

// Max over the reference batch of t_j; +inf on a non-finite argument.
double max_argument(const KmmObjective& obj, const Vector& theta, const DualState& beta, const Batch& ref) {
  const Vector t = obj.arguments(theta, beta, ref);
  if (!t.allFinite()) return std::numeric_limits<double>::infinity();
  return t.maxCoeff();
}

// Shift eta down so that max_j t_j = 1/2. Lowering eta lowers every t_j by
// the same amount, so this restores strict LOG feasibility in one move.
void restore_feasibility(const KmmObjective& obj, const Vector& theta, DualState& beta, const Batch& ref) {
  const double mt = max_argument(obj, theta, beta, ref);
  if (!std::isfinite(mt)) throw Infeasible("non-finite barrier argument");
  beta.eta -= obj.config().epsilon * (mt - 0.5);
}

bool is_log(const KmmObjective& obj) { return obj.config().divergence.kind() == DivergenceKind::Log; }

}  // namespace

FitResult fit(const KmmObjective& objective_in, const Dataset& train, const ReferenceMeasure& reference,
              Vector theta0, DualState beta0, const GdaConfig& cfg, const ValidationMetric& metric,
              const ProgressSink& progress) {
  cfg.validate();
  if (train.size() == 0) throw InvalidInput("fit: empty training set");
  if (reference.dim() != train.x_dim() + train.z_dim()) {
    throw InvalidInput("fit: reference dimension does not match joint (x, z) dimension");
  }
  if (theta0.size() != objective_in.model().num_params()) throw InvalidInput("fit: theta0 has wrong size");

  FitResult res;
  res.seed = cfg.seed;
  res.theta_initial = theta0;
  Rng rng = make_rng(cfg.seed, 0x474441);

  const Eigen::Index n = train.size();
  const Eigen::Index dx = train.x_dim();
  const ObjectiveConfig& ocfg = objective_in.config();
  const Eigen::Index n1 = (cfg.full_batch || ocfg.batch_emp == 0) ? n : ocfg.batch_emp;
  const Eigen::Index n2 = ocfg.batch_ref == 0 ? n : ocfg.batch_ref;

  // Precompute f-space features for the training rows once.
  const RowMatrix train_features = ocfg.features->apply_batch(train.joint());
  const Instrument h_shape = beta0.instrument;
  const RowMatrix train_basis = h_shape.basis(train.z);

  auto split_ref = [&](const Matrix& joint) {
    return objective_in.prepare(joint.leftCols(dx), joint.rightCols(joint.cols() - dx), h_shape);
  };

  Batch full_emp;
  std::optional<Batch> fixed_ref;
  if (n1 == n) {
    full_emp.x = train.x;
    full_emp.z = train.z;
    full_emp.features = train_features;
    full_emp.h_basis = train_basis;
  }
  if (cfg.full_batch) {
    if (reference.kind() == ReferenceKind::Empirical && ocfg.batch_ref == 0) {
      fixed_ref = full_emp;
    } else if (ocfg.batch_ref == 0) {
      fixed_ref = split_ref(reference.stratified_sample(n2, rng));
    } else {
      fixed_ref = split_ref(reference.sample(n2, rng));
    }
  }

  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  auto draw_emp = [&]() {
    if (n1 == n && cfg.full_batch) return full_emp;
    Batch b;
    b.x.resize(n1, dx);
    b.z.resize(n1, train.z_dim());
    b.features.resize(n1, train_features.cols());
    b.h_basis.resize(n1, train_basis.cols());
    for (Eigen::Index i = 0; i < n1; ++i) {
      const Eigen::Index r = pick(rng);
      b.x.row(i) = train.x.row(r);
      b.z.row(i) = train.z.row(r);
      b.features.row(i) = train_features.row(r);
      if (train_basis.cols() > 0) b.h_basis.row(i) = train_basis.row(r);
    }
    return b;
  };

  Vector theta = std::move(theta0);
  DualState beta = std::move(beta0);
  Stepper beta_step(cfg.rule, cfg.lr_beta, cfg.stepper);
  Stepper theta_step(cfg.rule, cfg.lr_theta, cfg.stepper);

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  res.theta = theta;
  if (metric) {
    best = metric(theta);
    res.best_metric = best;
    res.trace.push_back({0, std::numeric_limits<double>::quiet_NaN(), best,
                         cfg.anneal ? anneal_schedule(*cfg.anneal, 0) : ocfg.epsilon});
    res.theta_trace.push_back(theta);
  }

  const bool log_div = is_log(objective_in);
  double last_value = 0.0;

  for (long k = 0; k < cfg.max_iters; ++k) {
    const double eps = cfg.anneal ? anneal_schedule(*cfg.anneal, k) : ocfg.epsilon;
    const KmmObjective obj = (eps == ocfg.epsilon) ? objective_in : objective_in.with_epsilon(eps);

    const Batch emp = draw_emp();
    const Batch ref = fixed_ref ? *fixed_ref : split_ref(reference.sample(n2, rng));

    if (log_div && !(max_argument(obj, theta, beta, ref) < 1.0)) {
      ++res.barrier_violations;
      restore_feasibility(obj, theta, beta, ref);
      ++res.backtracks;
    }

    // Extra beta-only ascent steps.
    for (int s = 1; s < cfg.inner_steps; ++s) {
      const ObjectiveEval ev = obj.evaluate(theta, beta, emp, ref, true, false);
      const Vector d = beta_step.step(ev.grad_beta.flatten());
      double scale = 1.0;
      DualState cand = beta.unflatten(beta.flatten() + d);
      int tries = 0;
      while (log_div && !(max_argument(obj, theta, cand, ref) < 1.0)) {
        ++res.barrier_violations;
        ++res.backtracks;
        if (++tries > cfg.max_backtracks) throw Infeasible("LOG barrier infeasible after backtracking");
        scale *= 0.5;
        cand = beta.unflatten(beta.flatten() + scale * d);
      }
      beta = std::move(cand);
    }

    const ObjectiveEval ev = obj.evaluate(theta, beta, emp, ref, true, true);
    res.clipped += ev.clipped;
    const Vector gb = ev.grad_beta.flatten();
    if (!std::isfinite(ev.value) || !gb.allFinite() || !ev.grad_theta.allFinite()) {
      throw Diverged("non-finite objective or gradient at iteration " + std::to_string(k));
    }
    last_value = ev.value;

    const Vector db = beta_step.step(gb);
    const Vector dt = theta_step.step(ev.grad_theta);
    double scale = 1.0;
    DualState beta_next = beta.unflatten(beta.flatten() + db);
    Vector theta_next = theta - dt;
    int tries = 0;
    while (log_div && !(max_argument(obj, theta_next, beta_next, ref) < 1.0)) {
      ++res.barrier_violations;
      ++res.backtracks;
      if (++tries > cfg.max_backtracks) throw Infeasible("LOG barrier infeasible after backtracking");
      scale *= 0.5;
      beta_next = beta.unflatten(beta.flatten() + scale * db);
      theta_next = theta - scale * dt;
    }
    beta = std::move(beta_next);
    theta = std::move(theta_next);
    if (!theta.allFinite()) throw Diverged("non-finite theta at iteration " + std::to_string(k));
    res.iterations = k + 1;

    if ((k + 1) % cfg.eval_every == 0 || k + 1 == cfg.max_iters) {
      TracePoint tp{k + 1, last_value, std::numeric_limits<double>::quiet_NaN(), eps};
      if (metric) {
        tp.metric = metric(theta);
        if (!std::isfinite(tp.metric)) throw Diverged("non-finite validation metric");
        if (tp.metric < best - cfg.min_delta) {
          best = tp.metric;
          res.best_metric = best;
          res.best_iteration = k + 1;
          res.theta = theta;
          since_best = 0;
        } else {
          ++since_best;
        }
      }
      res.trace.push_back(tp);
      res.theta_trace.push_back(theta);
      if (progress) progress(tp);
      if (metric && cfg.patience > 0 && since_best >= cfg.patience) {
        res.stopped_early = true;
        break;
      }
    }
  }

  if (!metric) {
    res.theta = theta;
    res.best_iteration = res.iterations;
  }
  res.theta_final = std::move(theta);
  res.dual = std::move(beta);
  return res;
}

FitResult fit(std::shared_ptr<const MomentModel> model, const Instrument& instrument, const Dataset& train,
              const ReferenceMeasure& reference, const ObjectiveConfig& obj_cfg, const GdaConfig& gda_cfg,
              const ValidationMetric& metric) {
  const KmmObjective objective(model, obj_cfg);
  Vector theta0 = model->initial_theta(gda_cfg.seed);
  return fit(objective, train, reference, std::move(theta0), DualState::zero(obj_cfg, instrument), gda_cfg,
             metric);
}

DualSolveResult maximize_dual(const KmmObjective& objective, const Vector& theta, DualState beta0,
                              const Batch& emp, const Batch& ref, const DualSolveOptions& opts) {
  DualSolveResult res;
  DualState beta = std::move(beta0);
  const Eigen::Index na = beta.alpha.size();
  const Eigen::Index nh = beta.instrument.num_params();
  Vector mask(beta.size());
  mask(0) = opts.update_eta ? 1.0 : 0.0;
  mask.segment(1, na).setConstant(opts.update_alpha ? 1.0 : 0.0);
  mask.tail(nh).setConstant(opts.update_instrument ? 1.0 : 0.0);

  double eps = objective.config().epsilon;
  double step = 1.0;
  const bool log_div = is_log(objective);

  for (long k = 0; k < opts.max_iters; ++k) {
    if (opts.anneal) eps = anneal_schedule(*opts.anneal, k);
    const KmmObjective obj = objective.with_epsilon(eps);
    if (log_div && !(max_argument(obj, theta, beta, ref) < 1.0)) restore_feasibility(obj, theta, beta, ref);

    const ObjectiveEval ev = obj.evaluate(theta, beta, emp, ref, true, false);
    const Vector g = ev.grad_beta.flatten().cwiseProduct(mask);
    const double gnorm2 = g.squaredNorm();
    res.value = ev.value;
    res.grad_norm = std::sqrt(gnorm2);
    res.iterations = k;
    const bool annealing_done = !opts.anneal || eps <= opts.anneal->floor ||
                                anneal_schedule(*opts.anneal, k + 1) == eps;
    if (annealing_done && res.grad_norm < opts.grad_tol) {
      res.converged = true;
      break;
    }

    const Vector x = beta.flatten();
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      const DualState cand = beta.unflatten(x + step * g);
      double v = -std::numeric_limits<double>::infinity();
      try {
        v = obj.value(theta, cand, emp, ref);
      } catch (const BarrierViolation&) {
      } catch (const Diverged&) {
      }
      if (v >= ev.value + 1e-4 * step * gnorm2) {
        beta = cand;
        accepted = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No ascent possible at machine precision.
      res.converged = annealing_done;
      break;
    }
  }
  const KmmObjective obj = objective.with_epsilon(eps);
  res.value = obj.value(theta, beta, emp, ref);
  res.epsilon = eps;
  res.beta = std::move(beta);
  return res;
}

}  // namespace mforge
