#pragma once

#include "mforge/datagen.hpp"
#include "mforge/moment_model.hpp"
#include "mforge/optimizer.hpp"
#include "mforge/records.hpp"
#include "mforge/validation.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mforge {

std::string library_version();

struct ModelSettings {
  // "" picks the design's default: hetero_iv for hetero_iv, mlp for
  // network designs, mean, linear_iv.
  std::string name;
  std::vector<Eigen::Index> hidden{20, 3};
  double leaky_slope = 0.2;
};

struct ReferenceSettings {
  std::string kind = "kde";
  double sigma = kDefaultKdeSigma;
  bool scale_by_std = false;
  double alpha = 0.0;  // mixture weight on the box component
  std::vector<double> box_lower;
  std::vector<double> box_upper;
};

struct InstrumentSettings {
  std::string kind = "rff";  // rff | mlp | const
  Eigen::Index features = 200;
  std::vector<Eigen::Index> hidden{20, 3};
  double bandwidth = 0.0;  // 0: median heuristic on z
};

struct KmmSettings {
  std::vector<std::string> divergences{"kl"};
  std::vector<double> epsilons{1.0, 0.1, 0.01};
  std::vector<double> lambdas{0.0, 1e-4, 1e-2, 1.0};
  Eigen::Index rff_features = 200;
  double f_bandwidth = 0.0;  // 0: median heuristic on joint (x, z)
  InstrumentSettings instrument;
  ReferenceSettings reference;
  Eigen::Index batch_emp = 200;
  Eigen::Index batch_ref = 200;
  std::string init = "ols";  // ols | model
  GdaConfig gda;
};

struct ExactSettings {
  Eigen::Index grid_extra = 256;
  double inflate = 0.2;
  double bracket = 3.0;  // theta search interval half-width around OLS
};

struct ExperimentConfig {
  Design design;
  Eigen::Index n_train = 0;
  Eigen::Index n_val = 0;  // 0: same as n_train
  Eigen::Index n_test = 20000;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> estimators;
  MetricKind metric = MetricKind::Hsic;
  int jobs = 1;
  ModelSettings model;
  KmmSettings kmm;
  ExactSettings exact;

  // Parses JSON text. Unknown keys, bad values and missing required keys
  // ("design", "n_train", "estimator"/"estimators") raise ConfigError
  // naming the key, with the line when it can be located.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  void validate() const;
  // Canonical JSON echo of every effective setting.
  std::string canonical() const;
};

inline const std::vector<std::string> kEstimators{"ols", "cu_gmm", "chi2_gel", "mmr", "kmm", "kmm_exact"};

std::shared_ptr<const MomentModel> make_model(const ModelSettings& settings, const Design& design,
                                              const Dataset& sample);

struct SeedData {
  Dataset train;
  Dataset val;
  Dataset test;
};
SeedData make_seed_data(const ExperimentConfig& cfg, std::uint64_t seed);

// Error of theta against the design truth: E[(g_theta(T) - g0(T))^2] over
// the test sample for conditional designs, |theta - theta0|^2 otherwise.
double test_error(const ExperimentConfig& cfg, const MomentModel& model, const Vector& theta,
                  const Dataset& test);

// Runs one estimator on one seed. Library errors are captured in the
// record (ok = false) rather than thrown.
RunRecord run_one(const ExperimentConfig& cfg, const std::string& estimator, std::uint64_t seed,
                  const ProgressSink& progress = {});

// Every (seed, estimator) pair on up to `jobs` worker threads. Records are
// passed to `sink` one at a time in (seed, estimator) order.
std::vector<RunRecord> run_benchmark(const ExperimentConfig& cfg, int jobs,
                                     const std::function<void(const RunRecord&)>& sink = {});

// Worker count after applying the MOMENT_FORGE_THREADS cap.
int effective_jobs(int requested);

// "0,1,5" or ranges "0-4"; mixed forms allowed. ConfigError on bad input.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

struct AsymptoticsOptions {
  std::vector<Eigen::Index> n_grid{250, 500, 1000, 2000};
  int replications = 100;
  int variance_replications = 200;  // at the largest n
  double variance = 4.0;            // X ~ N(0, variance)
  std::uint64_t seed = 0;
  double start_offset = 1.0;  // theta starts at theta0 + offset
  Eigen::Index rff_features = 50;
  std::string divergence = "kl";
  double epsilon = 1.0;
  GdaConfig gda;
  int jobs = 1;

  AsymptoticsOptions();
};

struct AsymptoticsReport {
  std::vector<Eigen::Index> n_grid;
  std::vector<double> mse;  // mean squared parameter error per n
  double slope = 0.0;       // least-squares slope of log mse on log n
  double scaled_variance = 0.0;  // Var(sqrt(n) (theta - theta0)) at the largest n
  double xi0 = 0.0;              // plug-in asymptotic variance, Var(X)
  double variance_ratio = 0.0;   // scaled_variance / xi0
};

AsymptoticsReport asymptotics_check(const AsymptoticsOptions& opts);

// Strong-duality spot checks on random discrete supports: the exact dual
// against the primal quadratic program solved over the support weights.
struct DualityCheck {
  double dual = 0.0;
  double primal = 0.0;
};
std::vector<DualityCheck> duality_check(int instances, Eigen::Index support, std::uint64_t seed);

// Exact primal  min_p 1/2 (p - w)^T K (p - w)  s.t.  Psi^T p = 0, 1^T p = 1,
// p >= 0  by enumerating active sets (small supports only). Returns +inf
// when infeasible.
double discrete_primal_profile(const Matrix& k, const Vector& w, const Matrix& psi);

}  // namespace mforge
