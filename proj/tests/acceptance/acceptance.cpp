// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Run a subset with e.g. `mforge_acceptance 1 2 11`.

#include "mforge/baselines.hpp"
#include "mforge/datagen.hpp"
#include "mforge/error.hpp"
#include "mforge/experiment.hpp"
#include "mforge/objective.hpp"
#include "mforge/optimizer.hpp"
#include "oracles/oracle_values.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace mforge;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

Vector central_diff(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = 1e-6 * (1.0 + std::abs(x(k)));
    Vector a = x, b = x;
    a(k) += h;
    b(k) -= h;
    g(k) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

double rel_diff(const Vector& a, const Vector& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(b.lpNorm<Eigen::Infinity>(), 1e-3);
}

// 1. Conjugate closed forms, derivatives and normalizations.
Outcome conjugates() {
  const Divergence kl(DivergenceKind::KL), lg(DivergenceKind::Log), c2(DivergenceKind::Chi2);
  double worst = 0.0;
  auto track = [&](double got, double want) {
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
  };
  track(kl.conjugate(1.0), oracle::kKlAt1);
  track(kl.conjugate(-2.0), oracle::kKlAtMinus2);
  track(lg.conjugate(0.5), oracle::kLogAtHalf);
  track(lg.conjugate(-3.0), oracle::kLogAtMinus3);
  for (double t : {-4.0, -1.0, -0.3, 0.0, 0.2, 0.7, 0.95}) {
    track(kl.conjugate(t), std::expm1(t));
    track(kl.conjugate_d1(t), std::exp(t));
    track(kl.conjugate_d2(t), std::exp(t));
    track(lg.conjugate(t), -std::log1p(-t));
    track(lg.conjugate_d1(t), 1.0 / (1.0 - t));
    track(lg.conjugate_d2(t), 1.0 / ((1.0 - t) * (1.0 - t)));
    track(c2.conjugate(t), 0.5 * t * t + t);
    track(c2.conjugate_d1(t), t + 1.0);
    track(c2.conjugate_d2(t), 1.0);
  }
  for (const auto* d : {&kl, &lg, &c2}) {
    track(d->conjugate(0.0), 0.0);
    track(d->conjugate_d1(0.0), 1.0);
    track(d->conjugate_d2(0.0), 1.0);
  }
  bool domain = false;
  try {
    lg.conjugate(1.0);
  } catch (const DomainError&) {
    domain = true;
  }
  return {worst <= 1e-12 && domain, fmt("max rel err %.2e", worst) + (domain ? ", LOG(1) raises" : ", LOG(1) did not raise")};
}

// A random objective instance for the gradient and concavity suites.
struct Instance {
  std::shared_ptr<const MomentModel> model;
  ObjectiveConfig cfg;
  Batch emp, ref;
  DualState beta;
  Vector theta;
  std::string label;
};

// Pulls eta down until every LOG argument is at most 1/2.
void make_feasible(const KmmObjective& obj, const Vector& theta, DualState& beta, const Batch& ref) {
  const double mt = obj.arguments(theta, beta, ref).maxCoeff();
  if (mt > 0.5) beta.eta -= obj.config().epsilon * (mt - 0.5);
}

Instance make_instance(DivergenceKind div, int variant, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance s;
  s.cfg.divergence = Divergence(div);
  s.cfg.epsilon = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
  s.cfg.lambda = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
  const Eigen::Index ne = 7 + static_cast<Eigen::Index>(seed % 5), nr = 9 + static_cast<Eigen::Index>(seed % 4);
  Matrix xe, xr, ze, zr;
  Instrument h;
  if (variant == 0) {
    // Unconditional moments with a constant instrument.
    if (seed % 2 == 0) {
      s.model = std::make_shared<MeanModel>(2);
      xe = gaussian(ne, 2, rng);
      xr = gaussian(nr, 2, rng);
    } else {
      s.model = std::make_shared<LinearIvMoments>(1, 2);
      xe = gaussian(ne, 4, rng);
      xr = gaussian(nr, 4, rng);
    }
    ze = Matrix(ne, 0);
    zr = Matrix(nr, 0);
    h = Instrument::constant(gaussian(s.model->psi_dim(), 1, rng, 0.3).col(0));
    s.label = "MR/CONST";
  } else {
    s.model = std::make_shared<IvResidualModel>(std::make_shared<HeteroIvFunction>());
    xe = gaussian(ne, 2, rng);
    xr = gaussian(nr, 2, rng);
    ze = gaussian(ne, 2, rng, 2.0);
    zr = gaussian(nr, 2, rng, 2.0);
    if (variant == 1) {
      h = Instrument::constant(gaussian(1, 1, rng, 0.3).col(0));
      s.label = "CMR/CONST";
    } else if (variant == 2) {
      h = Instrument::rff(std::make_shared<const RffMap>(KernelSpec(1.5, 2), 6, seed + 1), 1);
      h = h.with_params(gaussian(h.num_params(), 1, rng, 0.1).col(0));
      s.label = "CMR/RFF";
    } else {
      const Mlp net({2, 5, 1});
      h = Instrument::mlp(net, 0.5 * net.init_params(seed + 2));
      s.label = "CMR/MLP";
    }
  }
  const Eigen::Index joint = xe.cols() + ze.cols();
  s.cfg.features = std::make_shared<const RffMap>(KernelSpec(1.5, joint), 10, seed + 3);
  const KmmObjective obj(s.model, s.cfg);
  s.emp = obj.prepare(xe, ze, h);
  s.ref = obj.prepare(xr, zr, h);
  s.beta = DualState::zero(s.cfg, h);
  s.beta.eta = std::normal_distribution<double>(0.0, 0.2)(rng);
  s.beta.alpha = gaussian(10, 1, rng, 0.2).col(0);
  s.theta = s.model->num_params() == 4 ? Vector(HeteroIvFunction::true_theta() + gaussian(4, 1, rng, 0.3).col(0))
                                       : Vector(gaussian(s.model->num_params(), 1, rng, 0.5).col(0));
  make_feasible(obj, s.theta, s.beta, s.ref);
  return s;
}

// 2. Analytic gradients against central differences.
Outcome gradients() {
  const DivergenceKind divs[] = {DivergenceKind::KL, DivergenceKind::Log, DivergenceKind::Chi2};
  double worst = 0.0;
  std::set<std::string> covered;
  for (int c = 0; c < 50; ++c) {
    const DivergenceKind div = divs[c % 3];
    const int variant = (c / 3) % 4;
    const Instance s = make_instance(div, variant, 1000 + static_cast<std::uint64_t>(c));
    covered.insert(s.label + "/" + std::string(Divergence(div).name()));
    const KmmObjective obj(s.model, s.cfg);
    const Vector gb = obj.grad_beta(s.theta, s.beta, s.emp, s.ref).flatten();
    const Vector fb = central_diff([&](const Vector& b) { return obj.value(s.theta, s.beta.unflatten(b), s.emp, s.ref); },
                                   s.beta.flatten());
    const Vector gt = obj.grad_theta(s.theta, s.beta, s.emp, s.ref);
    const Vector ft = central_diff([&](const Vector& th) { return obj.value(th, s.beta, s.emp, s.ref); }, s.theta);
    worst = std::max({worst, rel_diff(gb, fb), rel_diff(gt, ft)});
  }
  return {worst <= 1e-5 && covered.size() == 12,
          fmt("50 configs, %.0f combinations, worst rel err %.2e", double(covered.size()), worst)};
}

// 3. Midpoint concavity of the objective in beta. Instruments are linear in
// their parameters here; an MLP instrument is not concave in its weights.
Outcome concavity() {
  std::string detail;
  bool pass = true;
  for (auto div : {DivergenceKind::KL, DivergenceKind::Log, DivergenceKind::Chi2}) {
    double worst = -std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 100; ++trial) {
      const std::uint64_t seed = 5000 + static_cast<std::uint64_t>(trial);
      const Instance s = make_instance(div, trial % 3, seed);
      const KmmObjective obj(s.model, s.cfg);
      std::mt19937_64 rng(seed + 77);
      DualState b1 = s.beta.unflatten(s.beta.flatten() + gaussian(s.beta.size(), 1, rng, 0.3).col(0));
      DualState b2 = s.beta.unflatten(s.beta.flatten() + gaussian(s.beta.size(), 1, rng, 0.3).col(0));
      make_feasible(obj, s.theta, b1, s.ref);
      make_feasible(obj, s.theta, b2, s.ref);
      const DualState mid = b1.unflatten(0.5 * (b1.flatten() + b2.flatten()));
      const double gap = 0.5 * (obj.value(s.theta, b1, s.emp, s.ref) + obj.value(s.theta, b2, s.emp, s.ref)) -
                         obj.value(s.theta, mid, s.emp, s.ref);
      worst = std::max(worst, gap);
    }
    pass = pass && worst <= 1e-10;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(Divergence(div).name()) +
              fmt(" max chord gap %.1e", worst);
  }
  return {pass, "100 trials each: " + detail};
}

// 4. Exact dual against the primal QP: frozen convex-solver values and an
// in-process active-set enumeration.
Outcome strong_duality() {
  double worst_oracle = 0.0, worst_enum = 0.0;
  const KernelSpec k(1.0, 1);
  const MeanModel m(1);
  for (const auto& c : oracle::kDualityCases) {
    Matrix support(5, 1);
    Vector w(5);
    int n = 0;
    for (int v : c.counts) n += v;
    Matrix data(n, 1);
    for (int i = 0, r = 0; i < 5; ++i) {
      support(i, 0) = c.points[i];
      w(i) = static_cast<double>(c.counts[i]) / n;
      for (int j = 0; j < c.counts[i]; ++j) data(r++, 0) = c.points[i];
    }
    const Vector theta = Vector::Constant(1, c.theta);
    const ExactProfile p = exact_mmd_profile(m, theta, Dataset::unconditional(data), support, k);
    worst_oracle = std::max(worst_oracle, std::abs(p.value - c.primal));
    const double primal = discrete_primal_profile(gram(support, support, k), w, support.array() - c.theta);
    worst_enum = std::max(worst_enum, std::abs(p.value - primal));
  }
  return {worst_oracle <= 1e-4 && worst_enum <= 1e-4,
          fmt("10 instances, max |dual - primal| %.2e (frozen QP), %.2e (enumeration)", worst_oracle, worst_enum)};
}

// 5. LOG-regularized inner value along a decreasing epsilon path on a frozen
// (theta, h) problem, against the constrained dual.
Outcome epsilon_path() {
  std::mt19937_64 rng(11);
  const auto model = std::make_shared<MeanModel>(1);
  const Matrix xe = (gaussian(40, 1, rng).array() + 1.0).matrix();
  const Matrix xr = (gaussian(60, 1, rng, 2.0).array() + 0.5).matrix();
  const Vector theta = Vector::Zero(1);
  const Instrument h = Instrument::constant(Vector::Ones(1));

  ObjectiveConfig cfg;
  cfg.divergence = Divergence(DivergenceKind::Log);
  cfg.features = std::make_shared<const RffMap>(KernelSpec(1.5, 1), 30, 4);
  const KmmObjective obj(model, cfg);
  const Batch emp = obj.prepare(xe, Matrix(40, 0), h), ref = obj.prepare(xr, Matrix(60, 0), h);

  ConstrainedDual exact;
  exact.f_data = emp.features;
  exact.f_grid = ref.features;
  exact.norm = Matrix::Identity(30, 30);
  exact.psi_grid = model->psi(xr, theta);
  exact.fixed_h = Vector::Ones(1);
  exact.value_bound = 1e6;
  const double v_exact = solve_constrained_dual(exact).value;

  DualState beta = DualState::zero(cfg, h);
  DualSolveOptions o;
  o.update_instrument = false;
  o.max_iters = 200000;
  o.grad_tol = 1e-8;
  std::vector<double> values;
  for (double eps : {100.0, 10.0, 1.0, 0.1, 0.01}) {
    const DualSolveResult r = maximize_dual(obj.with_epsilon(eps), theta, beta, emp, ref, o);
    values.push_back(r.value);
    beta = r.beta;
  }
  bool monotone = true;
  for (std::size_t i = 1; i < values.size(); ++i) monotone = monotone && values[i] <= values[i - 1] + 1e-9;
  const double gap = std::abs(values.back() - v_exact) / std::abs(v_exact);
  std::ostringstream os;
  os.precision(5);
  os << "V(eps) =";
  for (double v : values) os << ' ' << v;
  os << ", exact " << v_exact << ", final gap " << 100.0 * gap << "%";
  return {monotone && values.back() >= v_exact - 1e-9 && gap < 0.05, os.str()};
}

// 6. CU-GMM and chi2-GEL on overidentified linear IV.
Outcome cu_gmm_vs_gel() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset d = gen_linear_iv(500, 100 + seed, 3);
    const LinearIvMoments m(1, 3);
    const Vector a = cu_gmm_fit(m, d, Vector::Zero(1));
    const Vector b = chi2_gel_fit(m, d, Vector::Zero(1)).theta;
    worst = std::max(worst, (a - b).lpNorm<Eigen::Infinity>());
  }
  return {worst <= 1e-3, fmt("10 designs, max |theta_CU - theta_GEL| %.2e", worst)};
}

// 7. CHI2 KMM on the mean model through the experiment pipeline.
Outcome chi2_mean() {
  const ExperimentConfig cfg = ExperimentConfig::parse(R"({
    "design": "mean", "n_train": 500, "seeds": [0, 1, 2, 3, 4], "estimator": "kmm",
    "reference": {"kind": "empirical"},
    "kmm": {"divergence": "chi2", "epsilon": [1], "lambda": [0], "init": "model",
            "batch_emp": 0, "batch_ref": 0,
            "optimizer": {"rule": "sgd", "full_batch": true, "lr_theta": 0.05, "lr_beta": 0.05,
                          "max_iters": 3000}}
  })");
  double worst = 0.0;
  bool ok = true;
  for (auto seed : cfg.seeds) {
    const RunRecord r = run_one(cfg, "kmm", seed);
    ok = ok && r.ok && r.theta.size() == 1;
    if (!ok) return {false, "run failed: " + r.error};
    worst = std::max(worst, std::abs(r.theta[0] - make_seed_data(cfg, seed).train.x.mean()));
  }
  return {worst <= 1e-3, fmt("5 seeds from theta = 0, max |theta - mean| %.2e", worst)};
}

// 8. Root-n rate and asymptotic variance on the mean model.
Outcome asymptotics() {
  AsymptoticsOptions o;
  o.jobs = effective_jobs(4);
  const AsymptoticsReport r = asymptotics_check(o);
  const bool slope_ok = r.slope >= -1.3 && r.slope <= -0.7;
  const bool var_ok = std::abs(r.variance_ratio - 1.0) <= 0.25;
  return {slope_ok && var_ok, fmt("slope %.3f, Var(sqrt(n) err) %.3f vs Xi0 %.3f (ratio %.3f)", r.slope,
                                  r.scaled_variance, r.xi0, r.variance_ratio)};
}

// With theta0 given, median parameter errors are reported alongside.
Outcome benchmark_medians(const std::string& config, double cap, const Vector& theta0 = Vector()) {
  const ExperimentConfig cfg = ExperimentConfig::parse(config);
  const auto records = run_benchmark(cfg, effective_jobs(4));
  std::vector<double> ols, kmm, ols_err, kmm_err;
  for (const auto& r : records) {
    if (!r.ok) return {false, "run failed: seed " + std::to_string(r.seed) + " " + r.estimator + ": " + r.error};
    (r.estimator == "ols" ? ols : kmm).push_back(r.test_mse);
    if (theta0.size() > 0 && static_cast<Eigen::Index>(r.theta.size()) == theta0.size()) {
      const Vector th = Eigen::Map<const Vector>(r.theta.data(), theta0.size());
      (r.estimator == "ols" ? ols_err : kmm_err).push_back((th - theta0).norm());
    }
  }
  const double mo = median(ols), mk = median(kmm);
  std::ostringstream os;
  os.precision(4);
  os << "KMM median " << mk << " (";
  for (std::size_t i = 0; i < kmm.size(); ++i) os << (i ? " " : "") << kmm[i];
  os << "), OLS median " << mo << ", cap " << cap;
  if (!kmm_err.empty() && !ols_err.empty()) {
    os << "; median |theta - theta0| KMM " << median(kmm_err) << " vs OLS " << median(ols_err);
  }
  return {mk < mo && mk <= cap, os.str()};
}

// 9. Hetero-IV table row at desk scale.
Outcome hetero_table() {
  return benchmark_medians(R"({
    "design": "hetero_iv", "n_train": 500, "seeds": [0, 1, 2, 3, 4], "estimators": ["ols", "kmm"],
    "reference": {"kind": "kde"}, "metric": "hsic",
    "kmm": {"epsilon": [1, 0.1, 0.01], "lambda": [0, 1e-4, 1e-2, 1],
            "optimizer": {"lr_theta": 2e-3, "lr_beta": 1e-2, "max_iters": 3000, "eval_every": 50,
                          "patience": 20}}
  })",
                           1.0, HeteroIvFunction::true_theta());
}

// 10. Network-IV abs design at desk scale.
Outcome network_table() {
  return benchmark_medians(R"({
    "design": "network_iv:abs", "n_train": 1000, "seeds": [0, 1, 2], "estimators": ["ols", "kmm"],
    "kmm": {"epsilon": [1, 0.1, 0.01], "lambda": [0, 1e-4, 1e-2, 1],
            "optimizer": {"max_iters": 3000, "eval_every": 50, "patience": 20}}
  })",
                           3.0 * 0.032);
}

std::vector<std::string> payload_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(record_payload(line));
  }
  return out;
}

// Numerical content of a record: the payload without the config echo, which
// legitimately changes with command-line overrides such as --jobs or --seeds.
std::string numbers_of(const std::string& payload) {
  RunRecord r = parse_record(payload.substr(0, payload.size() - 1) + R"(,"timing":{"wall_seconds":0}})");
  r.config = "{}";
  return record_payload(serialize_record(r));
}

std::vector<std::string> numbers_of(const std::vector<std::string>& payloads) {
  std::vector<std::string> out;
  for (const auto& p : payloads) out.push_back(numbers_of(p));
  return out;
}

// 11. Repeated runs give identical numbers, in process and through the CLI.
Outcome determinism() {
  const std::string config = R"({
    "design": "hetero_iv", "n_train": 200, "n_test": 2000, "seeds": [3, 4],
    "estimators": ["ols", "kmm", "mmr"],
    "kmm": {"epsilon": [1, 0.1], "lambda": [0.01], "rff_features": 50,
            "instrument": {"kind": "rff", "features": 50},
            "optimizer": {"max_iters": 300, "eval_every": 50}}
  })";
  const ExperimentConfig cfg = ExperimentConfig::parse(config);
  std::vector<std::string> first, second;
  for (const auto& r : run_benchmark(cfg, 1)) first.push_back(record_payload(serialize_record(r)));
  for (const auto& r : run_benchmark(cfg, 2)) second.push_back(record_payload(serialize_record(r)));
  const RunRecord single = run_one(cfg, "kmm", 4);
  bool ok = first == second && first.size() == 6 && record_payload(serialize_record(single)) == first[4];
  std::string detail = ok ? "in-process identical (jobs 1 vs 2, run_one)" : "in-process records differ";

#ifdef MFORGE_CLI
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("mforge_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path cfg_path = dir / "config.json";
  std::ofstream(cfg_path) << config;
  auto run = [&](const std::string& cmd, const fs::path& out) {
    const std::string line = std::string("\"") + MFORGE_CLI + "\" " + cmd + " --config \"" + cfg_path.string() +
                             "\" --out \"" + out.string() + "\" 2>/dev/null";
    return std::system(line.c_str()) == 0;
  };
  const bool ran = run("benchmark --jobs 2", dir / "b1.jsonl") && run("benchmark --jobs 2", dir / "b2.jsonl") &&
                   run("fit --seeds 4 --estimator kmm", dir / "f1.jsonl") &&
                   run("fit --seeds 4 --estimator kmm", dir / "f2.jsonl");
  const auto b1 = payload_lines((dir / "b1.jsonl").string()), b2 = payload_lines((dir / "b2.jsonl").string());
  const auto f1 = payload_lines((dir / "f1.jsonl").string()), f2 = payload_lines((dir / "f2.jsonl").string());
  const bool cli_ok = ran && b1.size() == 6 && b1 == b2 && numbers_of(b1) == numbers_of(first) && f1 == f2 &&
                      f1.size() == 1 && numbers_of(f1[0]) == numbers_of(first[4]);
  fs::remove_all(dir);
  ok = ok && cli_ok;
  detail += cli_ok ? "; CLI benchmark and fit identical and equal to in-process" : "; CLI outputs differ or failed";
#endif
  return {ok, detail};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0: no runtime bound
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion all[] = {
      {1, "conjugate exactness", 1.0, conjugates},
      {2, "gradient suite", 30.0, gradients},
      {3, "dual concavity", 0.0, concavity},
      {4, "strong duality", 60.0, strong_duality},
      {5, "epsilon convergence", 0.0, epsilon_path},
      {6, "CU-GMM equals chi2-GEL", 0.0, cu_gmm_vs_gel},
      {7, "mean-model exactness", 0.0, chi2_mean},
      {8, "consistency rate", 600.0, asymptotics},
      {9, "hetero-IV table", 1200.0, hetero_table},
      {10, "network-IV abs table", 1800.0, network_table},
      {11, "determinism", 0.0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_seconds == 0.0 || secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s criterion %d (%s): %s [%.1fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
