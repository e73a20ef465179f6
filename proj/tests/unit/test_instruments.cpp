#include "helpers.hpp"
#include "mforge/error.hpp"
#include "mforge/instrument.hpp"

#include <doctest.h>

using namespace mforge;
using testing::numeric_gradient;
using testing::random_matrix;
using testing::random_vector;
using testing::rel_error;

namespace {

std::shared_ptr<const RffMap> z_map(Eigen::Index d = 16) {
  return std::make_shared<const RffMap>(KernelSpec(1.0, 2), d, 3);
}

}  // namespace

TEST_SUITE("instruments") {
  TEST_CASE("constant vector ignores z") {
    const Instrument h = Instrument::constant((Vector(2) << 1.0, -2.0).finished());
    CHECK(h.evaluate(random_vector(3, 1)) == (Vector(2) << 1.0, -2.0).finished());
    CHECK(h.input_dim() == -1);
    CHECK(h.squared_norm() == 5.0);
    CHECK(Instrument::constant((Vector(2) << 3.0, 4.0).finished()).squared_norm() == 25.0);
  }

  TEST_CASE("pairing value") {
    const Instrument h = Instrument::constant(Vector::Constant(1, 2.0));
    const Vector psi = Vector::Constant(1, 3.0);
    CHECK(psi.dot(h.evaluate(Vector::Zero(1))) == 6.0);
  }

  TEST_CASE("rff with zero coefficients") {
    const Instrument h = Instrument::rff(z_map(), 2);
    CHECK(h.num_params() == 2 * 16);
    CHECK(h.evaluate(random_vector(2, 4)).isZero());
    CHECK(h.squared_norm() == 0.0);
    CHECK_THROWS_AS(h.evaluate(random_vector(3, 4)), InvalidInput);
  }

  TEST_CASE("rff squared norm is Frobenius") {
    const Instrument h = Instrument::rff(std::make_shared<const RffMap>(KernelSpec(1.0, 1), 2, 1), 1)
                             .with_params(Vector::Ones(2));
    CHECK(h.squared_norm() == 2.0);
  }

  TEST_CASE("pairing gradients") {
    const Vector psi = (Vector(2) << 0.5, -1.5).finished();
    const Vector z = random_vector(2, 7);

    const Instrument c = Instrument::constant(random_vector(2, 8));
    CHECK(c.param_gradient_of_pairing(psi, z) == psi);

    const auto map = z_map();
    const Instrument r = Instrument::rff(map, 2).with_params(random_vector(32, 9));
    const Vector phi = map->apply(z);
    Vector expected(32);
    for (int k = 0; k < 2; ++k) expected.segment(16 * k, 16) = psi(k) * phi;
    CHECK(rel_error(r.param_gradient_of_pairing(psi, z), expected) < 1e-14);

    const Mlp net({2, 20, 3, 2});
    const Instrument m = Instrument::mlp(net, net.init_params(10));
    for (int trial = 0; trial < 5; ++trial) {
      const Vector zz = random_vector(2, 20 + trial);
      const Vector fd = numeric_gradient(
          [&](const Vector& p) { return psi.dot(m.with_params(p).evaluate(zz)); }, m.params());
      CHECK(rel_error(m.param_gradient_of_pairing(psi, zz), fd) < 1e-5);
    }
  }

  TEST_CASE("batched basis forms agree with pointwise forms") {
    const Matrix z = random_matrix(6, 2, 30);
    const Matrix wpsi = random_matrix(6, 2, 31);
    const Mlp net({2, 5, 2});
    const Instrument kinds[] = {Instrument::constant(random_vector(2, 32)),
                                Instrument::rff(z_map(), 2).with_params(random_vector(32, 33)),
                                Instrument::mlp(net, net.init_params(34))};
    for (const auto& h : kinds) {
      const RowMatrix basis = h.basis(z);
      const Matrix batch = h.evaluate_basis(basis, z.rows());
      Vector grad = Vector::Zero(h.num_params());
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        CHECK((batch.row(i).transpose() - h.evaluate(z.row(i).transpose())).norm() < 1e-12);
        grad += h.param_gradient_of_pairing(wpsi.row(i).transpose(), z.row(i).transpose());
      }
      CHECK(rel_error(h.pairing_gradient(basis, wpsi), grad) < 1e-12);
    }
  }

  TEST_CASE("linearity and homogeneity for constant and rff") {
    const Vector z = random_vector(2, 40);
    const auto map = z_map();
    const Instrument bases[] = {Instrument::constant(Vector::Zero(2)), Instrument::rff(map, 2)};
    for (const auto& base : bases) {
      const Vector p1 = random_vector(base.num_params(), 41);
      const Vector p2 = random_vector(base.num_params(), 42);
      const double a = 1.7, b = -0.4;
      const Vector lhs = base.with_params(a * p1 + b * p2).evaluate(z);
      const Vector rhs = a * base.with_params(p1).evaluate(z) + b * base.with_params(p2).evaluate(z);
      CHECK((lhs - rhs).norm() < 1e-12);
      CHECK(base.with_params(-3.0 * p1).squared_norm() ==
            doctest::Approx(9.0 * base.with_params(p1).squared_norm()).epsilon(1e-14));
    }
  }

  TEST_CASE("squared norm is zero exactly at zero parameters") {
    const Mlp net({1, 3, 1});
    const Instrument m = Instrument::mlp(net, Vector::Zero(net.num_params()));
    CHECK(m.squared_norm() == 0.0);
    Vector p = Vector::Zero(net.num_params());
    p(net.num_params() - 1) = 0.5;
    CHECK(m.with_params(p).squared_norm() > 0.0);
    CHECK_THROWS_AS(m.with_params(Vector::Zero(2)), InvalidInput);
  }
}
