#pragma once

#include <limits>
#include <string>
#include <string_view>

namespace mforge {

enum class DivergenceKind { KL, Log, Chi2 };

// A phi-divergence described through its convex conjugate phi* and the
// first two derivatives of phi*. All three satisfy phi*(0) = 0 and
// phi*'(0) = phi*''(0) = 1.
//
//   KL   phi(p) = p log p - p + 1   phi*(t) = e^t - 1
//   LOG  phi(p) = -log p + p - 1    phi*(t) = -log(1 - t),  t < 1
//   CHI2 phi(p) = (p - 1)^2 / 2     phi*(t) = t^2 / 2 + t
class Divergence {
 public:
  constexpr Divergence() = default;
  constexpr explicit Divergence(DivergenceKind kind) : kind_(kind) {}

  DivergenceKind kind() const { return kind_; }
  std::string_view name() const;

  // Largest admissible argument (exclusive for LOG).
  double domain_upper() const {
    return kind_ == DivergenceKind::Log ? 1.0 : std::numeric_limits<double>::infinity();
  }
  bool in_domain(double t) const { return t < domain_upper(); }

  // Throw DomainError when t is outside the domain.
  double conjugate(double t) const;
  double conjugate_d1(double t) const;
  double conjugate_d2(double t) const;

  static Divergence parse(std::string_view name);

  friend bool operator==(const Divergence&, const Divergence&) = default;

 private:
  DivergenceKind kind_ = DivergenceKind::KL;
};

}  // namespace mforge
