#include "helpers.hpp"
#include "mforge/error.hpp"
#include "mforge/objective.hpp"

#include <doctest.h>

using namespace mforge;
using testing::numeric_gradient;
using testing::random_matrix;
using testing::random_vector;
using testing::rel_error;

namespace {

struct Setup {
  std::shared_ptr<const MomentModel> model;
  ObjectiveConfig cfg;
  Batch emp, ref;
  DualState beta;
  Vector theta;
};

Setup mean_setup(DivergenceKind kind, double epsilon = 1.0) {
  Setup s;
  s.model = std::make_shared<MeanModel>(1);
  s.cfg.epsilon = epsilon;
  s.cfg.divergence = Divergence(kind);
  s.cfg.features = std::make_shared<const RffMap>(KernelSpec(1.0, 1), 8, 1);
  const KmmObjective obj(s.model, s.cfg);
  const Instrument h = Instrument::zero_constant(1);
  s.emp = obj.prepare(random_matrix(12, 1, 2), Matrix(12, 0), h);
  s.ref = obj.prepare(random_matrix(15, 1, 3), Matrix(15, 0), h);
  s.beta = DualState::zero(s.cfg, h);
  s.theta = Vector::Constant(1, 0.3);
  return s;
}

Setup hetero_setup(DivergenceKind kind) {
  Setup s;
  s.model = std::make_shared<IvResidualModel>(std::make_shared<HeteroIvFunction>());
  s.cfg.epsilon = 2.0;
  s.cfg.lambda = 0.3;
  s.cfg.divergence = Divergence(kind);
  s.cfg.features = std::make_shared<const RffMap>(KernelSpec(1.5, 4), 10, 4);
  const Instrument h = Instrument::rff(std::make_shared<const RffMap>(KernelSpec(1.0, 2), 6, 5), 1);
  const KmmObjective obj(s.model, s.cfg);
  s.emp = obj.prepare(random_matrix(9, 2, 6), random_matrix(9, 2, 7), h);
  s.ref = obj.prepare(random_matrix(11, 2, 8), random_matrix(11, 2, 9), h);
  s.beta = DualState::zero(s.cfg, h).unflatten(random_vector(1 + 10 + 6, 10, 0.1));
  s.theta = HeteroIvFunction::true_theta();
  return s;
}

}  // namespace

TEST_SUITE("objective") {
  TEST_CASE("beta = 0 gives value 0 and zero eta gradient") {
    for (auto k : {DivergenceKind::KL, DivergenceKind::Log, DivergenceKind::Chi2}) {
      const Setup s = mean_setup(k);
      const KmmObjective obj(s.model, s.cfg);
      CHECK(obj.value(s.theta, s.beta, s.emp, s.ref) == 0.0);
      CHECK(obj.grad_beta(s.theta, s.beta, s.emp, s.ref).eta == doctest::Approx(0.0).epsilon(1e-15));
    }
  }

  TEST_CASE("KL with eta = epsilon") {
    for (double eps : {0.5, 1.0, 3.0}) {
      Setup s = mean_setup(DivergenceKind::KL, eps);
      s.beta.eta = eps;
      const KmmObjective obj(s.model, s.cfg);
      CHECK(obj.value(s.theta, s.beta, s.emp, s.ref) == doctest::Approx(eps * (2.0 - std::exp(1.0))).epsilon(1e-13));
    }
  }

  TEST_CASE("h = 0 gives a zero theta gradient") {
    Setup s = hetero_setup(DivergenceKind::KL);
    s.beta.instrument = s.beta.instrument.with_params(Vector::Zero(s.beta.instrument.num_params()));
    const KmmObjective obj(s.model, s.cfg);
    CHECK(obj.grad_theta(s.theta, s.beta, s.emp, s.ref).isZero());
  }

  TEST_CASE("mean model theta gradient") {
    Setup s = mean_setup(DivergenceKind::KL);
    s.beta.instrument = Instrument::constant(Vector::Ones(1));
    s.beta.eta = 0.2;
    s.beta.alpha = random_vector(8, 11, 0.3);
    const KmmObjective obj(s.model, s.cfg);
    const Vector t = obj.arguments(s.theta, s.beta, s.ref);
    double expected = 0.0;
    for (Eigen::Index j = 0; j < t.size(); ++j) expected -= std::exp(t(j));
    expected /= static_cast<double>(t.size());
    CHECK(obj.grad_theta(s.theta, s.beta, s.emp, s.ref)(0) == doctest::Approx(expected).epsilon(1e-13));
  }

  TEST_CASE("gradients match finite differences on hetero-IV with an rff instrument") {
    for (auto k : {DivergenceKind::KL, DivergenceKind::Log, DivergenceKind::Chi2}) {
      const Setup s = hetero_setup(k);
      const KmmObjective obj(s.model, s.cfg);
      const Vector gb = obj.grad_beta(s.theta, s.beta, s.emp, s.ref).flatten();
      const Vector fdb = numeric_gradient(
          [&](const Vector& b) { return obj.value(s.theta, s.beta.unflatten(b), s.emp, s.ref); }, s.beta.flatten());
      CHECK(rel_error(gb, fdb) < 1e-5);
      const Vector gt = obj.grad_theta(s.theta, s.beta, s.emp, s.ref);
      const Vector fdt =
          numeric_gradient([&](const Vector& th) { return obj.value(th, s.beta, s.emp, s.ref); }, s.theta);
      CHECK(rel_error(gt, fdt) < 1e-5);
    }
  }

  TEST_CASE("evaluate agrees with the separate calls") {
    const Setup s = hetero_setup(DivergenceKind::Chi2);
    const KmmObjective obj(s.model, s.cfg);
    const ObjectiveEval e = obj.evaluate(s.theta, s.beta, s.emp, s.ref, true, true);
    CHECK(e.value == obj.value(s.theta, s.beta, s.emp, s.ref));
    CHECK(e.grad_beta.flatten() == obj.grad_beta(s.theta, s.beta, s.emp, s.ref).flatten());
    CHECK(e.grad_theta == obj.grad_theta(s.theta, s.beta, s.emp, s.ref));
  }

  TEST_CASE("LOG barrier violation carries max t") {
    Setup s = mean_setup(DivergenceKind::Log);
    s.beta.eta = 2.0;
    const KmmObjective obj(s.model, s.cfg);
    try {
      obj.value(s.theta, s.beta, s.emp, s.ref);
      FAIL("expected a barrier violation");
    } catch (const BarrierViolation& e) {
      CHECK(e.max_t() == doctest::Approx(2.0));
    }
  }

  TEST_CASE("KL arguments are clipped and counted") {
    Setup s = mean_setup(DivergenceKind::KL, 1.0);
    s.beta.eta = 80.0;
    const KmmObjective obj(s.model, s.cfg);
    const ObjectiveEval e = obj.evaluate(s.theta, s.beta, s.emp, s.ref, true, false);
    CHECK(e.clipped == s.ref.size());
    CHECK(std::isfinite(e.value));
  }

  TEST_CASE("constant instrument in conditional mode equals the unconditional evaluation") {
    const auto model = std::make_shared<MeanModel>(1);
    ObjectiveConfig cfg;
    cfg.features = std::make_shared<const RffMap>(KernelSpec(1.0, 1), 8, 1);
    const KmmObjective obj(model, cfg);
    const Instrument h = Instrument::constant(Vector::Constant(1, 0.7));
    const Matrix xe = random_matrix(10, 1, 2), xr = random_matrix(10, 1, 3);
    const Batch emp = obj.prepare(xe, Matrix(10, 0), h), ref = obj.prepare(xr, Matrix(10, 0), h);
    DualState beta = DualState::zero(cfg, h);
    beta.alpha = random_vector(8, 4, 0.2);
    beta.eta = -0.1;
    const double v = obj.value(Vector::Constant(1, 0.1), beta, emp, ref);
    const double v2 = obj.with_lambda(0.0).value(Vector::Constant(1, 0.1), beta, emp, ref);
    CHECK(v == v2);
  }

  TEST_CASE("concavity in beta") {
    for (auto k : {DivergenceKind::KL, DivergenceKind::Log, DivergenceKind::Chi2}) {
      const Setup s = hetero_setup(k);
      const KmmObjective obj(s.model, s.cfg);
      for (int trial = 0; trial < 20; ++trial) {
        const Vector b1 = random_vector(s.beta.size(), 100 + trial, 0.1);
        const Vector b2 = random_vector(s.beta.size(), 200 + trial, 0.1);
        const double mid = obj.value(s.theta, s.beta.unflatten(0.5 * (b1 + b2)), s.emp, s.ref);
        const double avg = 0.5 * (obj.value(s.theta, s.beta.unflatten(b1), s.emp, s.ref) +
                                  obj.value(s.theta, s.beta.unflatten(b2), s.emp, s.ref));
        CHECK(mid >= avg - 1e-10);
      }
    }
  }

  TEST_CASE("config validation") {
    ObjectiveConfig cfg;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg.features = std::make_shared<const RffMap>(KernelSpec(1.0, 1), 4, 1);
    cfg.epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg.epsilon = 1.0;
    cfg.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  }
}
