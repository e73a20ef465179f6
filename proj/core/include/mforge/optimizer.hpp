#pragma once

#include "mforge/objective.hpp"
#include "mforge/reference.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

namespace mforge {

enum class UpdateRule { Sgd, Momentum, OptimisticSgd, Adam, OptimisticAdam };

std::string_view update_rule_name(UpdateRule rule);
UpdateRule parse_update_rule(std::string_view name);

// epsilon_k = max(floor, initial * gamma^k)
struct AnnealSchedule {
  double initial = 1.0;
  double gamma = 1.0;
  double floor = 0.0;
};

double anneal_schedule(const AnnealSchedule& schedule, long iteration);

// First-order update rule applied to one parameter block. `step` returns
// the increment for ascent on gradient g; descent callers negate it.
class Stepper {
 public:
  struct Params {
    double momentum = 0.9;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double adam_eps = 1e-8;
  };

  Stepper(UpdateRule rule, double lr, Params params);
  Stepper(UpdateRule rule, double lr) : Stepper(rule, lr, Params{}) {}

  Vector step(const Vector& grad);
  double lr() const { return lr_; }

 private:
  UpdateRule rule_;
  double lr_;
  Params p_;
  long t_ = 0;
  Vector prev_;  // previous gradient / direction, or momentum buffer
  Vector m_, v_;
};

struct GdaConfig {
  double lr_theta = 5e-4;
  double lr_beta = 2.5e-3;
  long max_iters = 2000;
  int inner_steps = 1;  // ascent steps on beta per descent step on theta
  UpdateRule rule = UpdateRule::OptimisticAdam;
  Stepper::Params stepper;
  std::optional<AnnealSchedule> anneal;
  std::uint64_t seed = 0;
  // Validation metric is evaluated every eval_every iterations; training
  // stops after `patience` evaluations without improvement (0 disables).
  long eval_every = 50;
  int patience = 0;
  double min_delta = 0.0;
  int max_backtracks = 20;
  // Use the whole training set as the empirical batch and a fixed
  // reference draw (or the base sample for an empirical reference).
  bool full_batch = false;

  void validate() const;
};

struct TracePoint {
  long iteration = 0;
  double objective = 0.0;
  double metric = 0.0;
  double epsilon = 0.0;
};

struct FitResult {
  Vector theta;          // best validation checkpoint (final when no metric)
  Vector theta_final;
  Vector theta_initial;
  DualState dual;
  long iterations = 0;
  long best_iteration = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
  long backtracks = 0;
  long barrier_violations = 0;
  long clipped = 0;
  std::uint64_t seed = 0;
  std::vector<TracePoint> trace;
  std::vector<Vector> theta_trace;  // theta at every evaluation point
};

// Lower is better.
using ValidationMetric = std::function<double(const Vector& theta)>;
using ProgressSink = std::function<void(const TracePoint&)>;

// Stochastic gradient descent-ascent on the KMM saddle objective: each
// iteration draws a fresh empirical batch and a reference batch, takes
// inner_steps ascent steps on beta and one descent step on theta.
FitResult fit(const KmmObjective& objective, const Dataset& train, const ReferenceMeasure& reference,
              Vector theta0, DualState beta0, const GdaConfig& cfg,
              const ValidationMetric& metric = {}, const ProgressSink& progress = {});

// Convenience form starting from beta = 0 with the given instrument.
FitResult fit(std::shared_ptr<const MomentModel> model, const Instrument& instrument,
              const Dataset& train, const ReferenceMeasure& reference, const ObjectiveConfig& obj_cfg,
              const GdaConfig& gda_cfg, const ValidationMetric& metric = {});

// Tab-separated progress line: iteration, objective, metric, epsilon.
std::string format_progress(const TracePoint& p);

struct DualSolveOptions {
  bool update_eta = true;
  bool update_alpha = true;
  bool update_instrument = true;
  long max_iters = 50000;
  double grad_tol = 1e-9;
  std::optional<AnnealSchedule> anneal;
};

struct DualSolveResult {
  DualState beta;
  double value = 0.0;
  double grad_norm = 0.0;
  double epsilon = 0.0;
  long iterations = 0;
  bool converged = false;
};

// Deterministic full-batch ascent on the selected beta blocks with theta
// (and any frozen blocks) held fixed. Armijo backtracking; barrier
// violations shrink the step. With `anneal`, epsilon follows the schedule.
DualSolveResult maximize_dual(const KmmObjective& objective, const Vector& theta, DualState beta0,
                              const Batch& emp, const Batch& ref, const DualSolveOptions& opts);

}  // namespace mforge
