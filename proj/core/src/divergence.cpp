#include "mforge/divergence.hpp"

#include "mforge/error.hpp"

#include <cmath>

namespace mforge {

namespace {

void check_log_domain(double t) {
  if (!(t < 1.0)) throw DomainError("LOG conjugate evaluated at t >= 1", t);
}

}  // namespace

std::string_view Divergence::name() const {
  switch (kind_) {
    case DivergenceKind::KL: return "kl";
    case DivergenceKind::Log: return "log";
    case DivergenceKind::Chi2: return "chi2";
  }
  return "?";
}

double Divergence::conjugate(double t) const {
  switch (kind_) {
    case DivergenceKind::KL: return std::expm1(t);
    case DivergenceKind::Log: check_log_domain(t); return -std::log1p(-t);
    case DivergenceKind::Chi2: return 0.5 * t * t + t;
  }
  return 0.0;
}

double Divergence::conjugate_d1(double t) const {
  switch (kind_) {
    case DivergenceKind::KL: return std::exp(t);
    case DivergenceKind::Log: check_log_domain(t); return 1.0 / (1.0 - t);
    case DivergenceKind::Chi2: return t + 1.0;
  }
  return 0.0;
}

double Divergence::conjugate_d2(double t) const {
  switch (kind_) {
    case DivergenceKind::KL: return std::exp(t);
    case DivergenceKind::Log: {
      check_log_domain(t);
      const double r = 1.0 / (1.0 - t);
      return r * r;
    }
    case DivergenceKind::Chi2: return 1.0;
  }
  return 0.0;
}

Divergence Divergence::parse(std::string_view name) {
  if (name == "kl") return Divergence(DivergenceKind::KL);
  if (name == "log") return Divergence(DivergenceKind::Log);
  if (name == "chi2") return Divergence(DivergenceKind::Chi2);
  throw ConfigError("unknown divergence '" + std::string(name) + "' (expected kl | log | chi2)",
                    "divergence");
}

}  // namespace mforge
