#pragma once

#include "mforge/types.hpp"

#include <cstdint>
#include <string>

namespace mforge {

enum class DesignKind { HeteroIv, NetworkIv, Mean, LinearIv };
enum class NetworkShape { Abs, Step, Sin, Linear };

NetworkShape parse_network_shape(const std::string& name);
std::string network_shape_name(NetworkShape shape);

// True structural function g0 of a network-IV design; step uses t >= 0.
double network_g0(NetworkShape shape, double t);

// x = [t, y], z = [z1, z2].
Dataset gen_hetero_iv(Eigen::Index n, std::uint64_t seed);

struct NetworkIvOptions {
  // gamma, delta ~ N(0, 0.1): read 0.1 as the variance (true) or the std.
  bool noise_is_variance = true;
  // e = gamma = delta = 0.
  bool noise_free = false;
};

// x = [t, y], z = [z].
Dataset gen_network_iv(NetworkShape shape, Eigen::Index n, std::uint64_t seed,
                       const NetworkIvOptions& opts = {});

// Unconditional x ~ N(mean, variance).
Dataset gen_mean(Eigen::Index n, std::uint64_t seed, double mean = 0.0, double variance = 4.0);

// Overidentified linear IV with one endogenous regressor and `instruments`
// valid instruments w ~ N(0, I): t = pi^T w + v + u, y = beta t + v + e,
// with first-stage pi ~ U[0.5, 1.5]^m drawn from the seed and beta = 1.
// Unconditional layout x = [t, y, w].
inline constexpr double kLinearIvBeta = 1.0;
Dataset gen_linear_iv(Eigen::Index n, std::uint64_t seed, Eigen::Index instruments = 2);

// A named benchmark design: generator plus its true structural function.
struct Design {
  DesignKind kind = DesignKind::HeteroIv;
  NetworkShape shape = NetworkShape::Abs;
  NetworkIvOptions network;
  double mean = 0.0;
  double variance = 4.0;
  Eigen::Index instruments = 2;

  // "hetero_iv", "network_iv:<shape>" (or just the shape), "mean", "linear_iv".
  static Design parse(const std::string& name);
  std::string name() const;

  Dataset generate(Eigen::Index n, std::uint64_t seed) const;
  bool conditional() const { return kind == DesignKind::HeteroIv || kind == DesignKind::NetworkIv; }
  // g0 evaluated at each row of t (conditional designs only).
  Vector truth(const Matrix& t) const;
  // True parameter of the unconditional designs.
  Vector true_parameter() const;
};

// CSV with a header of the x then z column names, full precision.
std::string dataset_csv(const Dataset& d);

}  // namespace mforge
