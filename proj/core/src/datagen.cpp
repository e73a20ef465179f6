#include "mforge/datagen.hpp"

#include "mforge/error.hpp"
#include "mforge/moment_model.hpp"
#include "mforge/rng.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <random>

namespace mforge {

NetworkShape parse_network_shape(const std::string& name) {
  if (name == "abs") return NetworkShape::Abs;
  if (name == "step") return NetworkShape::Step;
  if (name == "sin") return NetworkShape::Sin;
  if (name == "linear") return NetworkShape::Linear;
  throw ConfigError("unknown network-IV design '" + name + "'", "design");
}

std::string network_shape_name(NetworkShape shape) {
  switch (shape) {
    case NetworkShape::Abs: return "abs";
    case NetworkShape::Step: return "step";
    case NetworkShape::Sin: return "sin";
    case NetworkShape::Linear: return "linear";
  }
  return "?";
}

double network_g0(NetworkShape shape, double t) {
  switch (shape) {
    case NetworkShape::Abs: return std::abs(t);
    case NetworkShape::Step: return t >= 0.0 ? 1.0 : 0.0;
    case NetworkShape::Sin: return std::sin(t);
    case NetworkShape::Linear: return t;
  }
  return 0.0;
}

Dataset gen_hetero_iv(Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw InvalidInput("gen_hetero_iv: n must be >= 1");
  Rng rng = make_rng(seed, 0x48455445);
  std::uniform_real_distribution<double> unif(-5.0, 5.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const HeteroIvFunction g;
  const Vector theta0 = HeteroIvFunction::true_theta();

  Dataset d;
  d.x.resize(n, 2);
  d.z.resize(n, 2);
  Vector t(n), noise(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z1 = unif(rng);
    const double z2 = unif(rng);
    const double h = normal(rng);
    const double eta = normal(rng);
    const double e = normal(rng);
    const double t_exo = z1 + std::abs(z2);
    const double t_endo = 5.0 * h + 0.2 * eta;
    const double s = 0.1 * softplus(t_exo);
    t(i) = 0.75 * t_exo + 0.25 * t_endo;
    noise(i) = 5.0 * h + s * e;
    d.z(i, 0) = z1;
    d.z(i, 1) = z2;
  }
  d.x.col(0) = t;
  d.x.col(1) = g.value(t, theta0) + noise;
  d.x_names = {"t", "y"};
  d.z_names = {"z1", "z2"};
  return d;
}

Dataset gen_network_iv(NetworkShape shape, Eigen::Index n, std::uint64_t seed, const NetworkIvOptions& opts) {
  if (n < 1) throw InvalidInput("gen_network_iv: n must be >= 1");
  Rng rng = make_rng(seed, 0x4e4554);
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double small_std = opts.noise_is_variance ? std::sqrt(0.1) : 0.1;
  const double on = opts.noise_free ? 0.0 : 1.0;

  Dataset d;
  d.x.resize(n, 2);
  d.z.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = unif(rng);
    const double e = normal(rng);
    const double gamma = small_std * normal(rng);
    const double delta = small_std * normal(rng);
    const double t = z + on * (e + gamma);
    d.z(i, 0) = z;
    d.x(i, 0) = t;
    d.x(i, 1) = network_g0(shape, t) + on * (e + delta);
  }
  d.x_names = {"t", "y"};
  d.z_names = {"z"};
  return d;
}

Dataset gen_mean(Eigen::Index n, std::uint64_t seed, double mean, double variance) {
  if (n < 1) throw InvalidInput("gen_mean: n must be >= 1");
  if (!(variance >= 0.0)) throw InvalidInput("gen_mean: variance must be nonnegative");
  Rng rng = make_rng(seed, 0x4d45414e);
  std::normal_distribution<double> normal(mean, std::sqrt(variance));
  Matrix x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = normal(rng);
  Dataset d = Dataset::unconditional(std::move(x));
  d.x_names = {"x"};
  return d;
}

Dataset gen_linear_iv(Eigen::Index n, std::uint64_t seed, Eigen::Index instruments) {
  if (n < 1) throw InvalidInput("gen_linear_iv: n must be >= 1");
  if (instruments < 1) throw InvalidInput("gen_linear_iv: need at least one instrument");
  Rng rng = make_rng(seed, 0x4c4956);
  std::uniform_real_distribution<double> first_stage(0.5, 1.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector pi(instruments);
  for (Eigen::Index k = 0; k < instruments; ++k) pi(k) = first_stage(rng);

  Matrix x(n, 2 + instruments);
  for (Eigen::Index i = 0; i < n; ++i) {
    double t = 0.0;
    for (Eigen::Index k = 0; k < instruments; ++k) {
      const double w = normal(rng);
      x(i, 2 + k) = w;
      t += pi(k) * w;
    }
    const double v = normal(rng);
    t += v + normal(rng);
    x(i, 0) = t;
    x(i, 1) = kLinearIvBeta * t + v + normal(rng);
  }
  Dataset d = Dataset::unconditional(std::move(x));
  d.x_names = {"t", "y"};
  for (Eigen::Index k = 0; k < instruments; ++k) d.x_names.push_back("w" + std::to_string(k + 1));
  return d;
}

Design Design::parse(const std::string& name) {
  Design d;
  if (name == "hetero_iv") {
    d.kind = DesignKind::HeteroIv;
  } else if (name == "mean") {
    d.kind = DesignKind::Mean;
  } else if (name == "linear_iv") {
    d.kind = DesignKind::LinearIv;
  } else {
    const std::string prefix = "network_iv:";
    d.kind = DesignKind::NetworkIv;
    d.shape = parse_network_shape(name.rfind(prefix, 0) == 0 ? name.substr(prefix.size()) : name);
  }
  return d;
}

std::string Design::name() const {
  switch (kind) {
    case DesignKind::HeteroIv: return "hetero_iv";
    case DesignKind::Mean: return "mean";
    case DesignKind::LinearIv: return "linear_iv";
    case DesignKind::NetworkIv: return "network_iv:" + network_shape_name(shape);
  }
  return "?";
}

Dataset Design::generate(Eigen::Index n, std::uint64_t seed) const {
  switch (kind) {
    case DesignKind::HeteroIv: return gen_hetero_iv(n, seed);
    case DesignKind::NetworkIv: return gen_network_iv(shape, n, seed, network);
    case DesignKind::Mean: return gen_mean(n, seed, mean, variance);
    case DesignKind::LinearIv: return gen_linear_iv(n, seed, instruments);
  }
  throw InvalidInput("unknown design");
}

Vector Design::truth(const Matrix& t) const {
  switch (kind) {
    case DesignKind::HeteroIv: return HeteroIvFunction().value(t, HeteroIvFunction::true_theta());
    case DesignKind::NetworkIv: {
      Vector out(t.rows());
      for (Eigen::Index i = 0; i < t.rows(); ++i) out(i) = network_g0(shape, t(i, 0));
      return out;
    }
    case DesignKind::Mean:
    case DesignKind::LinearIv: break;
  }
  throw InvalidInput("design '" + name() + "' has no structural function");
}

Vector Design::true_parameter() const {
  if (kind == DesignKind::Mean) return Vector::Constant(1, mean);
  if (kind == DesignKind::LinearIv) return Vector::Constant(1, kLinearIvBeta);
  throw InvalidInput("design '" + name() + "' has no finite true parameter");
}

std::string dataset_csv(const Dataset& d) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto name = [](const std::vector<std::string>& names, Eigen::Index i, const char* prefix) {
    return i < static_cast<Eigen::Index>(names.size()) ? names[i] : prefix + std::to_string(i);
  };
  bool first = true;
  for (Eigen::Index c = 0; c < d.x_dim(); ++c, first = false) os << (first ? "" : ",") << name(d.x_names, c, "x");
  for (Eigen::Index c = 0; c < d.z_dim(); ++c, first = false) os << (first ? "" : ",") << name(d.z_names, c, "z");
  os << '\n';
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    first = true;
    for (Eigen::Index c = 0; c < d.x_dim(); ++c, first = false) os << (first ? "" : ",") << d.x(i, c);
    for (Eigen::Index c = 0; c < d.z_dim(); ++c, first = false) os << (first ? "" : ",") << d.z(i, c);
    os << '\n';
  }
  return os.str();
}

}  // namespace mforge
