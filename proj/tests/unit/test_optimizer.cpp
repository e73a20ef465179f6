#include "helpers.hpp"
#include "mforge/datagen.hpp"
#include "mforge/error.hpp"
#include "mforge/optimizer.hpp"

#include <doctest.h>

using namespace mforge;
using testing::random_matrix;

namespace {

struct MeanProblem {
  std::shared_ptr<const MomentModel> model = std::make_shared<MeanModel>(1);
  Dataset train;
  ObjectiveConfig cfg;
  Instrument h = Instrument::zero_constant(1);
};

MeanProblem mean_problem(DivergenceKind kind, Eigen::Index n = 60, std::uint64_t seed = 3) {
  MeanProblem p;
  p.train = gen_mean(n, seed, 1.0, 4.0);
  p.cfg.divergence = Divergence(kind);
  p.cfg.epsilon = 1.0;
  p.cfg.features = std::make_shared<const RffMap>(KernelSpec(2.0, 1), 20, 11);
  p.cfg.batch_emp = 0;
  p.cfg.batch_ref = 0;
  return p;
}

FitResult run(const MeanProblem& p, const ReferenceMeasure& ref, const GdaConfig& g, double theta0 = 0.0,
              const ValidationMetric& metric = {}) {
  const KmmObjective obj(p.model, p.cfg);
  return fit(obj, p.train, ref, Vector::Constant(1, theta0), DualState::zero(p.cfg, p.h), g, metric);
}

}  // namespace

TEST_SUITE("optimizer") {
  TEST_CASE("anneal schedule") {
    const AnnealSchedule s{100.0, 0.5, 0.01};
    CHECK(anneal_schedule(s, 0) == 100.0);
    CHECK(anneal_schedule(s, 3) == 12.5);
    CHECK(anneal_schedule(s, 13) == doctest::Approx(100.0 / 8192.0));
    CHECK(anneal_schedule(s, 14) == 0.01);
    CHECK(anneal_schedule(s, 400) == 0.01);
    CHECK(anneal_schedule({2.0, 1.0, 0.0}, 50) == 2.0);
    CHECK_THROWS_AS(anneal_schedule(s, -1), InvalidInput);
  }

  TEST_CASE("update rule names round trip") {
    for (auto r : {UpdateRule::Sgd, UpdateRule::Momentum, UpdateRule::OptimisticSgd, UpdateRule::Adam,
                   UpdateRule::OptimisticAdam}) {
      CHECK(parse_update_rule(update_rule_name(r)) == r);
    }
    CHECK(parse_update_rule("optimistic") == UpdateRule::OptimisticSgd);
    CHECK_THROWS_AS(parse_update_rule("rmsprop"), ConfigError);
  }

  TEST_CASE("stepper rules") {
    const Vector g1 = Vector::Constant(2, 1.0), g2 = Vector::Constant(2, 3.0);
    Stepper sgd(UpdateRule::Sgd, 0.1);
    CHECK(sgd.step(g1).isApprox(0.1 * g1));

    Stepper opt(UpdateRule::OptimisticSgd, 0.1);
    CHECK(opt.step(g1).isApprox(0.1 * g1));
    CHECK(opt.step(g2).isApprox(0.1 * (2.0 * g2 - g1)));

    Stepper mom(UpdateRule::Momentum, 1.0, {0.5, 0.5, 0.9, 1e-8});
    mom.step(g1);
    CHECK(mom.step(g1).isApprox(1.5 * g1));

    // The first bias-corrected Adam step is lr * sign(g).
    Stepper adam(UpdateRule::Adam, 0.01);
    const Vector d = adam.step(Vector::Constant(2, -7.0));
    CHECK(d(0) == doctest::Approx(-0.01).epsilon(1e-6));
  }

  TEST_CASE("config validation") {
    GdaConfig g;
    g.lr_theta = 0.0;
    CHECK_THROWS_AS(g.validate(), InvalidInput);
    g = GdaConfig{};
    g.eval_every = 0;
    CHECK_THROWS_AS(g.validate(), InvalidInput);
    g = GdaConfig{};
    g.anneal = AnnealSchedule{1.0, 1.5, 0.0};
    CHECK_THROWS_AS(g.validate(), InvalidInput);
  }

  TEST_CASE("zero iterations returns the start") {
    const MeanProblem p = mean_problem(DivergenceKind::KL);
    GdaConfig g;
    g.max_iters = 0;
    const FitResult r = run(p, ReferenceMeasure::empirical(p.train.joint()), g, 0.7);
    CHECK(r.iterations == 0);
    CHECK(r.theta(0) == 0.7);
    CHECK(r.theta_final(0) == 0.7);
    CHECK(r.dual.eta == 0.0);
  }

  TEST_CASE("mismatched inputs are rejected") {
    const MeanProblem p = mean_problem(DivergenceKind::KL);
    const KmmObjective obj(p.model, p.cfg);
    GdaConfig g;
    CHECK_THROWS_AS(fit(obj, p.train, ReferenceMeasure::empirical(random_matrix(5, 3, 1)), Vector::Zero(1),
                        DualState::zero(p.cfg, p.h), g),
                    InvalidInput);
    CHECK_THROWS_AS(fit(obj, p.train, ReferenceMeasure::empirical(p.train.joint()), Vector::Zero(2),
                        DualState::zero(p.cfg, p.h), g),
                    InvalidInput);
  }

  TEST_CASE("same seed gives bitwise identical fits") {
    MeanProblem p = mean_problem(DivergenceKind::KL);
    p.cfg.batch_emp = 16;
    p.cfg.batch_ref = 16;
    const ReferenceMeasure ref = ReferenceMeasure::kde(p.train.joint());
    GdaConfig g;
    g.max_iters = 200;
    g.lr_theta = 1e-2;
    g.lr_beta = 1e-2;
    g.seed = 9;
    const FitResult a = run(p, ref, g), b = run(p, ref, g);
    CHECK(a.theta_final(0) == b.theta_final(0));
    CHECK(a.dual.flatten() == b.dual.flatten());
    g.seed = 10;
    CHECK(run(p, ref, g).theta_final(0) != a.theta_final(0));
  }

  TEST_CASE("CHI2 mean model converges to the sample mean") {
    const MeanProblem p = mean_problem(DivergenceKind::Chi2);
    GdaConfig g;
    g.full_batch = true;
    g.rule = UpdateRule::Sgd;
    g.max_iters = 4000;
    g.lr_theta = 5e-2;
    g.lr_beta = 5e-2;
    const FitResult r = run(p, ReferenceMeasure::empirical(p.train.joint()), g);
    CHECK(std::abs(r.theta_final(0) - p.train.x.mean()) < 1e-8);
  }

  TEST_CASE("LOG steps never accept an infeasible iterate") {
    const MeanProblem p = mean_problem(DivergenceKind::Log);
    GdaConfig g;
    g.full_batch = true;
    g.rule = UpdateRule::Sgd;
    g.max_iters = 200;
    g.lr_theta = 0.05;
    g.lr_beta = 5.0;
    const FitResult r = run(p, ReferenceMeasure::empirical(p.train.joint()), g);
    CHECK(r.backtracks > 0);
    const KmmObjective obj(p.model, p.cfg);
    const Batch ref = obj.prepare(p.train.x, p.train.z, p.h);
    CHECK(obj.arguments(r.theta_final, r.dual, ref).maxCoeff() < 1.0);
  }

  TEST_CASE("best checkpoint tracks the validation metric") {
    const MeanProblem p = mean_problem(DivergenceKind::KL);
    const double target = p.train.x.mean();
    GdaConfig g;
    g.full_batch = true;
    g.max_iters = 600;
    g.eval_every = 25;
    g.lr_theta = 2e-2;
    g.lr_beta = 2e-2;
    const auto metric = [&](const Vector& th) { return std::abs(th(0) - target); };
    const FitResult r = run(p, ReferenceMeasure::empirical(p.train.joint()), g, 2.0, metric);
    REQUIRE(r.trace.size() == r.theta_trace.size());
    CHECK(r.trace.front().iteration == 0);
    double running = r.trace.front().metric;
    for (const auto& tp : r.trace) running = std::min(running, tp.metric);
    CHECK(r.best_metric == running);
    CHECK(metric(r.theta) == r.best_metric);
    CHECK(r.best_metric < 0.05);
  }

  TEST_CASE("patience stops early") {
    const MeanProblem p = mean_problem(DivergenceKind::KL);
    GdaConfig g;
    g.full_batch = true;
    g.max_iters = 5000;
    g.eval_every = 10;
    g.patience = 3;
    const FitResult r = run(p, ReferenceMeasure::empirical(p.train.joint()), g, 0.0,
                            [](const Vector&) { return 1.0; });
    CHECK(r.stopped_early);
    CHECK(r.iterations == 30);
    CHECK(r.best_iteration == 0);
  }

  TEST_CASE("annealed LOG dual solve stays feasible on the reference points") {
    MeanProblem p = mean_problem(DivergenceKind::Log, 30);
    const KmmObjective obj(p.model, p.cfg);
    const Batch emp = obj.prepare(p.train.x, p.train.z, p.h);
    const Batch ref = obj.prepare(random_matrix(40, 1, 5, 2.0), Matrix(40, 0), p.h);
    DualSolveOptions o;
    o.update_instrument = false;
    o.max_iters = 3000;
    o.anneal = AnnealSchedule{100.0, 0.5, 0.01};
    const Vector theta = Vector::Constant(1, 0.5);
    const DualSolveResult r = maximize_dual(obj, theta, DualState::zero(p.cfg, p.h), emp, ref, o);
    CHECK(r.epsilon == 0.01);
    CHECK(obj.with_epsilon(r.epsilon).arguments(theta, r.beta, ref).maxCoeff() < 1.0);
    CHECK(std::isfinite(r.value));
  }
}
