#include "mforge/experiment.hpp"

#include "mforge/baselines.hpp"
#include "mforge/error.hpp"
#include "mforge/rng.hpp"

#include <boost/math/tools/minima.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#ifndef MFORGE_VERSION
#define MFORGE_VERSION "0.0.0"
#endif

namespace mforge {

using nlohmann::json;

std::string library_version() { return MFORGE_VERSION; }

namespace {

// Seed streams derived from the run seed.
enum Stream : std::uint64_t {
  kTrain = 1,
  kVal = 2,
  kTest = 3,
  kInit = 4,
  kFeatures = 5,
  kInstrument = 6,
  kGda = 7,
  kGrid = 8,
  kAudit = 9,
};

int line_of(const std::string& text, const std::string& key) {
  const std::size_t pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

// Typed access to one JSON object with key-level diagnostics.
class Section {
 public:
  Section(const json& j, std::string prefix, const std::string& text)
      : j_(j), prefix_(std::move(prefix)), text_(text) {
    if (!j_.is_object()) fail(prefix_.empty() ? "(root)" : prefix_.substr(0, prefix_.size() - 1), "must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!ok.count(k)) fail(prefix_ + k, "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string leaf = key.substr(key.rfind('.') == std::string::npos ? 0 : key.rfind('.') + 1);
    const int line = line_of(text_, leaf);
    std::string msg = "config key '" + key + "': " + what;
    if (line > 0) msg += " (line " + std::to_string(line) + ")";
    throw ConfigError(msg, key, line);
  }

  void require(const char* key) const {
    if (!has(key)) {
      throw ConfigError("missing required config key '" + prefix_ + key + "'", prefix_ + key);
    }
  }

  template <class T>
  T get(const char* key, T fallback) const {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(prefix_ + key, "has the wrong type");
    }
  }

  template <class T>
  std::vector<T> list(const char* key, std::vector<T> fallback) const {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    try {
      if (v.is_array()) return v.get<std::vector<T>>();
      return {v.get<T>()};
    } catch (const json::exception&) {
      fail(prefix_ + key, "has the wrong type");
    }
  }

  Section sub(const char* key) const { return Section(j_.at(key), prefix_ + key + ".", text_); }

  std::string key(const char* k) const { return prefix_ + k; }

 private:
  const json& j_;
  std::string prefix_;
  const std::string& text_;
};

GdaConfig parse_gda(const Section& s, GdaConfig g) {
  s.allow({"rule", "lr_theta", "lr_beta", "max_iters", "inner_steps", "eval_every", "patience", "min_delta",
           "max_backtracks", "full_batch", "anneal", "momentum", "beta1", "beta2"});
  if (s.has("rule")) {
    try {
      g.rule = parse_update_rule(s.get<std::string>("rule", ""));
    } catch (const ConfigError&) {
      s.fail(s.key("rule"), "unknown update rule");
    }
  }
  g.lr_theta = s.get("lr_theta", g.lr_theta);
  g.lr_beta = s.get("lr_beta", g.lr_beta);
  g.max_iters = s.get("max_iters", g.max_iters);
  g.inner_steps = s.get("inner_steps", g.inner_steps);
  g.eval_every = s.get("eval_every", g.eval_every);
  g.patience = s.get("patience", g.patience);
  g.min_delta = s.get("min_delta", g.min_delta);
  g.max_backtracks = s.get("max_backtracks", g.max_backtracks);
  g.full_batch = s.get("full_batch", g.full_batch);
  g.stepper.momentum = s.get("momentum", g.stepper.momentum);
  g.stepper.beta1 = s.get("beta1", g.stepper.beta1);
  g.stepper.beta2 = s.get("beta2", g.stepper.beta2);
  if (s.has("anneal")) {
    const Section a = s.sub("anneal");
    a.allow({"initial", "gamma", "floor"});
    AnnealSchedule sched;
    sched.initial = a.get("initial", sched.initial);
    sched.gamma = a.get("gamma", sched.gamma);
    sched.floor = a.get("floor", sched.floor);
    g.anneal = sched;
  }
  try {
    g.validate();
  } catch (const InvalidInput& e) {
    s.fail(s.key("lr_theta").substr(0, s.key("").size() - 1), e.what());
  }
  return g;
}

json gda_json(const GdaConfig& g) {
  json j = {{"rule", std::string(update_rule_name(g.rule))},
            {"lr_theta", g.lr_theta},
            {"lr_beta", g.lr_beta},
            {"max_iters", g.max_iters},
            {"inner_steps", g.inner_steps},
            {"eval_every", g.eval_every},
            {"patience", g.patience},
            {"min_delta", g.min_delta},
            {"max_backtracks", g.max_backtracks},
            {"full_batch", g.full_batch},
            {"momentum", g.stepper.momentum},
            {"beta1", g.stepper.beta1},
            {"beta2", g.stepper.beta2}};
  if (g.anneal) j["anneal"] = {{"initial", g.anneal->initial}, {"gamma", g.anneal->gamma}, {"floor", g.anneal->floor}};
  return j;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto pos = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
    throw ConfigError("config is not valid JSON near line " + std::to_string(line) + ": " + e.what(), "", line);
  }
  const Section s(root, "", text);
  s.allow({"design", "n_train", "n_val", "n_test", "seed", "seeds", "estimator", "estimators", "metric", "jobs",
           "network_noise", "mean", "linear_iv", "model", "kmm", "reference", "exact"});

  ExperimentConfig cfg;
  s.require("design");
  try {
    cfg.design = Design::parse(s.get<std::string>("design", ""));
  } catch (const ConfigError&) {
    s.fail("design", "unknown design '" + s.get<std::string>("design", "") + "'");
  }
  s.require("n_train");
  cfg.n_train = s.get<Eigen::Index>("n_train", 0);
  cfg.n_val = s.get<Eigen::Index>("n_val", 0);
  cfg.n_test = s.get<Eigen::Index>("n_test", cfg.n_test);
  if (s.has("seeds") && s.has("seed")) s.fail("seed", "give either 'seed' or 'seeds'");
  if (s.has("seed")) cfg.seeds = {s.get<std::uint64_t>("seed", 0)};
  cfg.seeds = s.list<std::uint64_t>("seeds", cfg.seeds);
  if (!s.has("estimator") && !s.has("estimators")) {
    throw ConfigError("missing required config key 'estimator'", "estimator");
  }
  if (s.has("estimator")) cfg.estimators = {s.get<std::string>("estimator", "")};
  cfg.estimators = s.list<std::string>("estimators", cfg.estimators);
  for (const auto& e : cfg.estimators) {
    if (std::find(kEstimators.begin(), kEstimators.end(), e) == kEstimators.end()) {
      s.fail(s.has("estimator") ? "estimator" : "estimators", "unknown estimator '" + e + "'");
    }
  }
  if (s.has("metric")) {
    try {
      cfg.metric = parse_metric_kind(s.get<std::string>("metric", ""));
    } catch (const ConfigError&) {
      s.fail("metric", "must be \"hsic\" or \"mmr\"");
    }
  }
  cfg.jobs = s.get("jobs", cfg.jobs);

  if (s.has("network_noise")) {
    const auto v = s.get<std::string>("network_noise", "");
    if (v != "variance" && v != "std") s.fail("network_noise", "must be \"variance\" or \"std\"");
    cfg.design.network.noise_is_variance = v == "variance";
  }
  if (s.has("mean")) {
    const Section m = s.sub("mean");
    m.allow({"mean", "variance"});
    cfg.design.mean = m.get("mean", cfg.design.mean);
    cfg.design.variance = m.get("variance", cfg.design.variance);
  }
  if (s.has("linear_iv")) {
    const Section m = s.sub("linear_iv");
    m.allow({"instruments"});
    cfg.design.instruments = m.get("instruments", cfg.design.instruments);
  }
  if (s.has("model")) {
    const Section m = s.sub("model");
    m.allow({"name", "hidden", "leaky_slope"});
    cfg.model.name = m.get("name", cfg.model.name);
    cfg.model.hidden = m.list("hidden", cfg.model.hidden);
    cfg.model.leaky_slope = m.get("leaky_slope", cfg.model.leaky_slope);
  }
  KmmSettings& k = cfg.kmm;
  if (s.has("kmm")) {
    const Section m = s.sub("kmm");
    m.allow({"divergence", "epsilon", "lambda", "rff_features", "f_bandwidth", "instrument", "batch_emp",
             "batch_ref", "init", "optimizer"});
    k.divergences = m.list("divergence", k.divergences);
    for (const auto& d : k.divergences) {
      try {
        Divergence::parse(d);
      } catch (const ConfigError&) {
        m.fail(m.key("divergence"), "unknown divergence '" + d + "'");
      }
    }
    k.epsilons = m.list("epsilon", k.epsilons);
    k.lambdas = m.list("lambda", k.lambdas);
    k.rff_features = m.get("rff_features", k.rff_features);
    k.f_bandwidth = m.get("f_bandwidth", k.f_bandwidth);
    k.batch_emp = m.get("batch_emp", k.batch_emp);
    k.batch_ref = m.get("batch_ref", k.batch_ref);
    k.init = m.get("init", k.init);
    if (k.init != "ols" && k.init != "model") m.fail(m.key("init"), "must be \"ols\" or \"model\"");
    if (m.has("instrument")) {
      const Section i = m.sub("instrument");
      i.allow({"kind", "features", "hidden", "bandwidth"});
      k.instrument.kind = i.get("kind", k.instrument.kind);
      if (k.instrument.kind != "rff" && k.instrument.kind != "mlp" && k.instrument.kind != "const") {
        i.fail(i.key("kind"), "must be \"rff\", \"mlp\" or \"const\"");
      }
      k.instrument.features = i.get("features", k.instrument.features);
      k.instrument.hidden = i.list("hidden", k.instrument.hidden);
      k.instrument.bandwidth = i.get("bandwidth", k.instrument.bandwidth);
    }
    if (m.has("optimizer")) k.gda = parse_gda(m.sub("optimizer"), k.gda);
  }
  if (s.has("reference")) {
    const Section r = s.sub("reference");
    r.allow({"kind", "sigma", "alpha", "box", "scale_by_std"});
    ReferenceSettings& ref = k.reference;
    ref.kind = r.get("kind", ref.kind);
    try {
      parse_reference_kind(ref.kind);
    } catch (const ConfigError&) {
      r.fail(r.key("kind"), "unknown reference kind '" + ref.kind + "'");
    }
    ref.sigma = r.get("sigma", ref.sigma);
    ref.alpha = r.get("alpha", ref.alpha);
    ref.scale_by_std = r.get("scale_by_std", ref.scale_by_std);
    if (r.has("box")) {
      const Section b = r.sub("box");
      b.allow({"lower", "upper"});
      ref.box_lower = b.list("lower", ref.box_lower);
      ref.box_upper = b.list("upper", ref.box_upper);
    }
  }
  if (s.has("exact")) {
    const Section e = s.sub("exact");
    e.allow({"grid_extra", "inflate", "bracket"});
    cfg.exact.grid_extra = e.get("grid_extra", cfg.exact.grid_extra);
    cfg.exact.inflate = e.get("inflate", cfg.exact.inflate);
    cfg.exact.bracket = e.get("bracket", cfg.exact.bracket);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'", "--config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  if (n_train < 1) throw ConfigError("config key 'n_train' must be >= 1", "n_train");
  if (n_val < 0) throw ConfigError("config key 'n_val' must be >= 1", "n_val");
  if (n_test < 1) throw ConfigError("config key 'n_test' must be >= 1", "n_test");
  if (seeds.empty()) throw ConfigError("config key 'seeds' must not be empty", "seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("config key 'seeds' must hold distinct values", "seeds");
  }
  if (estimators.empty()) throw ConfigError("config key 'estimators' must not be empty", "estimators");
  if (jobs < 1) throw ConfigError("config key 'jobs' must be >= 1", "jobs");
  if (kmm.divergences.empty() || kmm.epsilons.empty() || kmm.lambdas.empty()) {
    throw ConfigError("kmm grid lists must not be empty", "kmm");
  }
  for (double e : kmm.epsilons) {
    if (!(e > 0.0)) throw ConfigError("config key 'kmm.epsilon' values must be positive", "kmm.epsilon");
  }
  for (double l : kmm.lambdas) {
    if (!(l >= 0.0)) throw ConfigError("config key 'kmm.lambda' values must be nonnegative", "kmm.lambda");
  }
  if (kmm.rff_features < 1) throw ConfigError("config key 'kmm.rff_features' must be >= 1", "kmm.rff_features");
  if (kmm.instrument.features < 1) {
    throw ConfigError("config key 'kmm.instrument.features' must be >= 1", "kmm.instrument.features");
  }
  if (kmm.batch_emp < 0 || kmm.batch_ref < 0) {
    throw ConfigError("config keys 'kmm.batch_emp'/'kmm.batch_ref' must be >= 0", "kmm.batch_emp");
  }
  if (!(kmm.reference.sigma > 0.0)) throw ConfigError("config key 'reference.sigma' must be positive", "reference.sigma");
  if (!(kmm.reference.alpha >= 0.0 && kmm.reference.alpha <= 1.0)) {
    throw ConfigError("config key 'reference.alpha' must lie in [0, 1]", "reference.alpha");
  }
  if (kmm.reference.box_lower.size() != kmm.reference.box_upper.size()) {
    throw ConfigError("config keys 'reference.box.lower' and 'reference.box.upper' differ in length",
                      "reference.box");
  }
}

std::string ExperimentConfig::canonical() const {
  json j;
  j["design"] = design.name();
  j["n_train"] = n_train;
  j["n_val"] = n_val == 0 ? n_train : n_val;
  j["n_test"] = n_test;
  j["seeds"] = seeds;
  j["estimators"] = estimators;
  j["metric"] = metric_kind_name(metric);
  j["network_noise"] = design.network.noise_is_variance ? "variance" : "std";
  j["mean"] = {{"mean", design.mean}, {"variance", design.variance}};
  j["linear_iv"] = {{"instruments", design.instruments}};
  j["model"] = {{"name", model.name}, {"hidden", model.hidden}, {"leaky_slope", model.leaky_slope}};
  j["kmm"] = {{"divergence", kmm.divergences},
              {"epsilon", kmm.epsilons},
              {"lambda", kmm.lambdas},
              {"rff_features", kmm.rff_features},
              {"f_bandwidth", kmm.f_bandwidth},
              {"instrument",
               {{"kind", kmm.instrument.kind},
                {"features", kmm.instrument.features},
                {"hidden", kmm.instrument.hidden},
                {"bandwidth", kmm.instrument.bandwidth}}},
              {"batch_emp", kmm.batch_emp},
              {"batch_ref", kmm.batch_ref},
              {"init", kmm.init},
              {"optimizer", gda_json(kmm.gda)}};
  j["reference"] = {{"kind", kmm.reference.kind},
                    {"sigma", kmm.reference.sigma},
                    {"alpha", kmm.reference.alpha},
                    {"scale_by_std", kmm.reference.scale_by_std},
                    {"box", {{"lower", kmm.reference.box_lower}, {"upper", kmm.reference.box_upper}}}};
  j["exact"] = {{"grid_extra", exact.grid_extra}, {"inflate", exact.inflate}, {"bracket", exact.bracket}};
  return j.dump();
}

std::shared_ptr<const MomentModel> make_model(const ModelSettings& settings, const Design& design,
                                              const Dataset& sample) {
  std::string name = settings.name;
  if (name.empty()) {
    switch (design.kind) {
      case DesignKind::HeteroIv: name = "hetero_iv"; break;
      case DesignKind::NetworkIv: name = "mlp"; break;
      case DesignKind::Mean: name = "mean"; break;
      case DesignKind::LinearIv: name = "linear_iv"; break;
    }
  }
  if (name == "hetero_iv") return std::make_shared<IvResidualModel>(std::make_shared<HeteroIvFunction>());
  if (name == "linear") {
    return std::make_shared<IvResidualModel>(std::make_shared<LinearFunction>(sample.x_dim() - 1, true));
  }
  if (name == "mlp") {
    std::vector<Eigen::Index> widths{sample.x_dim() - 1};
    widths.insert(widths.end(), settings.hidden.begin(), settings.hidden.end());
    widths.push_back(1);
    return std::make_shared<IvResidualModel>(std::make_shared<MlpFunction>(Mlp(widths, settings.leaky_slope)));
  }
  if (name == "mean") return std::make_shared<MeanModel>(sample.x_dim());
  if (name == "linear_iv") {
    if (design.kind != DesignKind::LinearIv) throw ConfigError("model 'linear_iv' needs the linear_iv design", "model.name");
    return std::make_shared<LinearIvMoments>(1, design.instruments);
  }
  throw ConfigError("unknown model '" + name + "'", "model.name");
}

SeedData make_seed_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedData d;
  d.train = cfg.design.generate(cfg.n_train, mix_seed(seed, kTrain));
  d.val = cfg.design.generate(cfg.n_val == 0 ? cfg.n_train : cfg.n_val, mix_seed(seed, kVal));
  if (cfg.design.conditional()) d.test = cfg.design.generate(cfg.n_test, mix_seed(seed, kTest));
  return d;
}

double test_error(const ExperimentConfig& cfg, const MomentModel& model, const Vector& theta, const Dataset& test) {
  if (!cfg.design.conditional()) return (theta - cfg.design.true_parameter()).squaredNorm();
  const auto* iv = dynamic_cast<const IvResidualModel*>(&model);
  if (!iv) throw InvalidInput("test error needs an IV residual model");
  const Matrix t = test.x.leftCols(test.x_dim() - 1);
  return (iv->function().value(t, theta) - cfg.design.truth(t)).squaredNorm() / static_cast<double>(t.rows());
}

namespace {

struct KmmCell {
  std::string divergence;
  double epsilon;
  double lambda;

  std::string key() const {
    std::ostringstream os;
    os << "div=" << divergence << ",eps=" << epsilon << ",lambda=" << lambda;
    return os.str();
  }
};

ReferenceMeasure make_reference(const ReferenceSettings& r, const Matrix& joint) {
  auto box = [&]() {
    if (!r.box_lower.empty()) {
      if (static_cast<Eigen::Index>(r.box_lower.size()) != joint.cols()) {
        throw ConfigError("reference.box bounds must match the joint (x, z) dimension", "reference.box");
      }
      return ReferenceMeasure::uniform_box(Eigen::Map<const Vector>(r.box_lower.data(), joint.cols()),
                                           Eigen::Map<const Vector>(r.box_upper.data(), joint.cols()));
    }
    const Vector lo = joint.colwise().minCoeff().transpose();
    const Vector hi = joint.colwise().maxCoeff().transpose();
    const Vector pad = 0.2 * (hi - lo);
    return ReferenceMeasure::uniform_box(lo - pad, hi + pad);
  };
  switch (parse_reference_kind(r.kind)) {
    case ReferenceKind::Kde: return ReferenceMeasure::kde(joint, r.sigma, r.scale_by_std);
    case ReferenceKind::Empirical: return ReferenceMeasure::empirical(joint);
    case ReferenceKind::UniformBox: return box();
    case ReferenceKind::Mixture:
      return ReferenceMeasure::mixture(joint, r.alpha, std::make_shared<const ReferenceMeasure>(box()));
  }
  throw InvalidInput("unknown reference kind");
}

Instrument make_instrument(const ExperimentConfig& cfg, const MomentModel& model, const Dataset& train,
                           std::uint64_t seed) {
  const Eigen::Index m = model.psi_dim();
  const InstrumentSettings& s = cfg.kmm.instrument;
  if (train.z_dim() == 0 || s.kind == "const") return Instrument::zero_constant(m);
  if (s.kind == "mlp") {
    std::vector<Eigen::Index> widths{train.z_dim()};
    widths.insert(widths.end(), s.hidden.begin(), s.hidden.end());
    widths.push_back(m);
    Mlp net(widths, cfg.model.leaky_slope);
    return Instrument::mlp(net, net.init_params(mix_seed(seed, kInstrument)));
  }
  const KernelSpec spec = s.bandwidth > 0.0 ? KernelSpec(s.bandwidth, train.z_dim()) : median_kernel(train.z);
  return Instrument::rff(std::make_shared<const RffMap>(spec, s.features, mix_seed(seed, kInstrument)), m);
}

struct KmmOutcome {
  Vector theta;
  std::string selected;
  double score = 0.0;
  std::map<std::string, double> diagnostics;
};

KmmOutcome run_kmm(const ExperimentConfig& cfg, std::shared_ptr<const MomentModel> model, const SeedData& data,
                   const Vector& start, std::uint64_t seed, const ProgressSink& progress) {
  const KmmSettings& k = cfg.kmm;
  const bool conditional = data.train.z_dim() > 0;
  std::vector<KmmCell> cells;
  if (conditional) {
    for (const auto& d : k.divergences)
      for (double e : k.epsilons)
        for (double l : k.lambdas) cells.push_back({d, e, l});
  } else {
    // Without a conditioning variable there is no validation metric to
    // select with, so only the first cell of the grid is fitted.
    cells.push_back({k.divergences.front(), k.epsilons.front(), k.lambdas.front()});
  }

  const Matrix joint = data.train.joint();
  const KernelSpec fspec = k.f_bandwidth > 0.0 ? KernelSpec(k.f_bandwidth, joint.cols()) : median_kernel(joint);
  const auto features = std::make_shared<const RffMap>(fspec, k.rff_features, mix_seed(seed, kFeatures));
  const Instrument h = make_instrument(cfg, *model, data.train, seed);
  const ReferenceMeasure reference = make_reference(k.reference, joint);
  const ValidationMetric metric = conditional ? make_metric(cfg.metric, model, data.val) : ValidationMetric{};

  std::vector<std::optional<FitResult>> fits(cells.size());
  std::vector<std::string> keys;
  for (const auto& c : cells) keys.push_back(c.key());

  const GridSearchResult gs = grid_search(keys, [&](std::size_t i) {
    ObjectiveConfig oc;
    oc.epsilon = cells[i].epsilon;
    oc.lambda = cells[i].lambda;
    oc.divergence = Divergence::parse(cells[i].divergence);
    oc.features = features;
    oc.batch_emp = k.batch_emp;
    oc.batch_ref = k.batch_ref;
    GdaConfig g = k.gda;
    g.seed = mix_seed(seed, kGda);
    if (g.anneal) g.anneal->initial = std::max(g.anneal->initial, oc.epsilon);
    FitResult r = fit(KmmObjective(model, oc), data.train, reference, start, DualState::zero(oc, h), g, metric,
                      progress);
    const double score = conditional ? r.best_metric : 0.0;
    fits[i] = std::move(r);
    return score;
  });

  KmmOutcome out;
  const FitResult& best = *fits[gs.best];
  out.theta = best.theta;
  out.selected = keys[gs.best];
  out.score = gs.cells[gs.best].score;
  long failed = 0;
  for (const auto& c : gs.cells) failed += c.ok ? 0 : 1;
  out.diagnostics = {{"iterations", static_cast<double>(best.iterations)},
                     {"best_iteration", static_cast<double>(best.best_iteration)},
                     {"backtracks", static_cast<double>(best.backtracks)},
                     {"barrier_violations", static_cast<double>(best.barrier_violations)},
                     {"clipped", static_cast<double>(best.clipped)},
                     {"cells", static_cast<double>(cells.size())},
                     {"cells_failed", static_cast<double>(failed)}};
  return out;
}

Vector run_kmm_exact(const ExperimentConfig& cfg, const MomentModel& model, const Dataset& train,
                     const Vector& center, std::uint64_t seed, std::map<std::string, double>& diag) {
  if (train.z_dim() != 0) throw InvalidInput("kmm_exact needs an unconditional design");
  if (model.num_params() != 1) throw InvalidInput("kmm_exact supports scalar parameters only");
  const Matrix grid = default_constraint_grid(train.x, cfg.exact.grid_extra, cfg.exact.inflate, mix_seed(seed, kGrid));
  const Matrix audit =
      default_constraint_grid(train.x, 10 * cfg.exact.grid_extra, cfg.exact.inflate, mix_seed(seed, kAudit));
  const KernelSpec kernel = median_kernel(train.x);
  const double c = center(0);
  auto profile = [&](double th) {
    const ExactProfile p = exact_mmd_profile(model, Vector::Constant(1, th), train, grid, kernel, Matrix(), 1e-9);
    // Infeasible points get a large value sloping back toward the center.
    return p.dual.feasible ? p.value : 1e6 + std::abs(th - c);
  };
  const auto [th, value] = boost::math::tools::brent_find_minima(profile, c - cfg.exact.bracket,
                                                                 c + cfg.exact.bracket, 40);
  const ExactProfile fin = exact_mmd_profile(model, Vector::Constant(1, th), train, grid, kernel, audit, 1e-9);
  diag["profile"] = value;
  diag["grid_points"] = static_cast<double>(grid.rows());
  diag["audit_violation"] = fin.audit_violation;
  return Vector::Constant(1, th);
}

}  // namespace

RunRecord run_one(const ExperimentConfig& cfg, const std::string& estimator, std::uint64_t seed,
                  const ProgressSink& progress) {
  RunRecord rec;
  rec.config = cfg.canonical();
  rec.design = cfg.design.name();
  rec.estimator = estimator;
  rec.seed = seed;
  rec.n_train = cfg.n_train;
  rec.version = library_version();
  rec.val_metric = std::numeric_limits<double>::quiet_NaN();
  rec.test_mse = std::numeric_limits<double>::quiet_NaN();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const SeedData data = make_seed_data(cfg, seed);
    const auto model = make_model(cfg.model, cfg.design, data.train);
    const bool conditional = data.train.z_dim() > 0;
    const Vector theta0 = model->initial_theta(mix_seed(seed, kInit));
    auto ols_start = [&]() { return ols_fit(*model, data.train, theta0); };
    auto need_unconditional = [&]() {
      if (conditional) throw InvalidInput(estimator + " needs an unconditional design");
    };

    Vector theta;
    if (estimator == "ols") {
      theta = ols_start();
    } else if (estimator == "cu_gmm") {
      need_unconditional();
      theta = cu_gmm_fit(*model, data.train, theta0);
    } else if (estimator == "chi2_gel") {
      need_unconditional();
      theta = chi2_gel_fit(*model, data.train, theta0).theta;
    } else if (estimator == "mmr") {
      if (!conditional) throw InvalidInput("mmr needs a conditioning variable");
      theta = mmr_fit(*model, data.train, median_kernel(data.train.z), ols_start());
    } else if (estimator == "kmm") {
      const Vector start = cfg.kmm.init == "ols" ? ols_start() : theta0;
      KmmOutcome k = run_kmm(cfg, model, data, start, seed, progress);
      theta = std::move(k.theta);
      rec.selected = k.selected;
      rec.diagnostics = std::move(k.diagnostics);
    } else if (estimator == "kmm_exact") {
      theta = run_kmm_exact(cfg, *model, data.train, ols_start(), seed, rec.diagnostics);
    } else {
      throw ConfigError("unknown estimator '" + estimator + "'", "estimator");
    }

    rec.test_mse = test_error(cfg, *model, theta, data.test);
    if (conditional) {
      rec.metric = metric_kind_name(cfg.metric);
      rec.val_metric = make_metric(cfg.metric, model, data.val)(theta);
    }
    if (theta.size() <= 32) rec.theta.assign(theta.data(), theta.data() + theta.size());
    rec.theta_digest = parameter_digest(theta);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

int effective_jobs(int requested) {
  int jobs = std::max(1, requested);
  if (const char* env = std::getenv("MOMENT_FORGE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) jobs = std::min(jobs, cap);
  }
  return jobs;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  auto number = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("--seeds: bad seed list '" + text + "'", "--seeds");
    }
    return std::stoull(s);
  };
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    const std::uint64_t lo = number(item.substr(0, dash));
    const std::uint64_t hi = number(item.substr(dash + 1));
    if (hi < lo || hi - lo > 100000) throw ConfigError("bad seed range '" + item + "'", "--seeds");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw ConfigError("empty seed list", "--seeds");
  return out;
}

std::vector<RunRecord> run_benchmark(const ExperimentConfig& cfg, int jobs,
                                     const std::function<void(const RunRecord&)>& sink) {
  struct Task {
    std::uint64_t seed;
    std::string estimator;
  };
  std::vector<Task> tasks;
  for (auto seed : cfg.seeds)
    for (const auto& e : cfg.estimators) tasks.push_back({seed, e});

  std::vector<RunRecord> out(tasks.size());
  std::vector<char> done(tasks.size(), 0);
  std::size_t next_emit = 0;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;

  auto worker = [&]() {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      RunRecord r;
      try {
        r = run_one(cfg, tasks[i].estimator, tasks[i].seed);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
      std::lock_guard<std::mutex> lock(mu);
      out[i] = std::move(r);
      done[i] = 1;
      while (next_emit < tasks.size() && done[next_emit]) {
        if (sink) sink(out[next_emit]);
        ++next_emit;
      }
    }
  };
  const int n = std::min<int>(effective_jobs(jobs), static_cast<int>(tasks.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

AsymptoticsOptions::AsymptoticsOptions() {
  gda.lr_theta = 5e-3;
  gda.lr_beta = 1e-2;
  gda.max_iters = 1500;
  gda.full_batch = true;
}

AsymptoticsReport asymptotics_check(const AsymptoticsOptions& opts) {
  if (opts.replications < 50) throw InvalidInput("asymptotics_check needs at least 50 replications");
  if (opts.n_grid.size() < 2) throw InvalidInput("asymptotics_check needs at least two sample sizes");
  const auto model = std::make_shared<const MeanModel>(1);
  const Divergence div = Divergence::parse(opts.divergence);

  auto estimate = [&](Eigen::Index n, int rep) {
    const std::uint64_t s = mix_seed(opts.seed, static_cast<std::uint64_t>(n) * 100003ULL + static_cast<std::uint64_t>(rep));
    const Dataset data = gen_mean(n, s, 0.0, opts.variance);
    ObjectiveConfig oc;
    oc.epsilon = opts.epsilon;
    oc.divergence = div;
    oc.features = std::make_shared<const RffMap>(median_kernel(data.x), opts.rff_features, mix_seed(s, kFeatures));
    oc.batch_emp = 0;
    oc.batch_ref = 0;
    GdaConfig g = opts.gda;
    g.seed = mix_seed(s, kGda);
    const FitResult r = fit(KmmObjective(model, oc), data, ReferenceMeasure::kde(data.x), Vector::Constant(1, opts.start_offset),
                            DualState::zero(oc, Instrument::zero_constant(1)), g);
    return r.theta(0);
  };

  struct Job {
    Eigen::Index n;
    int rep;
  };
  const Eigen::Index n_max = *std::max_element(opts.n_grid.begin(), opts.n_grid.end());
  std::vector<Job> jobs;
  for (Eigen::Index n : opts.n_grid) {
    const int reps = n == n_max ? std::max(opts.replications, opts.variance_replications) : opts.replications;
    for (int r = 0; r < reps; ++r) jobs.push_back({n, r});
  }
  std::vector<double> est(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        est[i] = estimate(jobs[i].n, jobs[i].rep);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int nthreads = std::min<int>(effective_jobs(opts.jobs), static_cast<int>(jobs.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  AsymptoticsReport rep;
  rep.n_grid = opts.n_grid;
  rep.xi0 = opts.variance;
  std::vector<double> scaled;
  for (Eigen::Index n : opts.n_grid) {
    double sq = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].n != n) continue;
      if (jobs[i].rep < opts.replications) {
        sq += est[i] * est[i];
        ++count;
      }
      if (n == n_max) scaled.push_back(std::sqrt(static_cast<double>(n)) * est[i]);
    }
    rep.mse.push_back(sq / count);
  }
  // Least-squares slope of log mse on log n.
  const auto k = static_cast<double>(opts.n_grid.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < opts.n_grid.size(); ++i) {
    const double x = std::log(static_cast<double>(opts.n_grid[i]));
    const double y = std::log(rep.mse[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  rep.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  const MeanSe ms = mean_se_two_pass(scaled);
  rep.scaled_variance = ms.se * ms.se * static_cast<double>(ms.count);
  rep.variance_ratio = rep.scaled_variance / rep.xi0;
  return rep;
}

double discrete_primal_profile(const Matrix& k, const Vector& w, const Matrix& psi) {
  const Eigen::Index n = k.rows();
  if (n < 1 || n > 16) throw InvalidInput("discrete_primal_profile supports 1 to 16 support points");
  if (k.cols() != n || w.size() != n || psi.rows() != n) throw InvalidInput("discrete_primal_profile: shape mismatch");
  const Eigen::Index m = psi.cols();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i)
      if (mask & (1u << i)) idx.push_back(i);
    const auto s = static_cast<Eigen::Index>(idx.size());
    // KKT system of  min 1/2 (p - w)^T K (p - w)  on the free set with
    // [1^T; Psi^T] p_S = [1; 0].
    Matrix kkt = Matrix::Zero(s + 1 + m, s + 1 + m);
    Vector rhs = Vector::Zero(s + 1 + m);
    for (Eigen::Index a = 0; a < s; ++a) {
      for (Eigen::Index b = 0; b < s; ++b) kkt(a, b) = k(idx[a], idx[b]);
      rhs(a) = k.row(idx[a]).dot(w);
      kkt(a, s) = kkt(s, a) = 1.0;
      for (Eigen::Index c = 0; c < m; ++c) kkt(a, s + 1 + c) = kkt(s + 1 + c, a) = psi(idx[a], c);
    }
    rhs(s) = 1.0;
    const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    if ((kkt * sol - rhs).norm() > 1e-8) continue;
    Vector p = Vector::Zero(n);
    bool nonneg = true;
    for (Eigen::Index a = 0; a < s; ++a) {
      if (sol(a) < -1e-12) nonneg = false;
      p(idx[a]) = std::max(0.0, sol(a));
    }
    if (!nonneg) continue;
    const Vector d = p - w;
    best = std::min(best, 0.5 * d.dot(k * d));
  }
  return best;
}

std::vector<DualityCheck> duality_check(int instances, Eigen::Index support, std::uint64_t seed) {
  std::vector<DualityCheck> out;
  const MeanModel model(1);
  const KernelSpec kernel(1.0, 1);
  for (int r = 0; r < instances; ++r) {
    Rng rng = make_rng(seed, 0x445541 + static_cast<std::uint64_t>(r));
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Matrix pts(support, 1);
    for (Eigen::Index i = 0; i < support; ++i) pts(i, 0) = u(rng);
    // Twenty data points spread over the support, every point used once.
    const Eigen::Index n = 20;
    Matrix x(n, 1);
    Vector w = Vector::Zero(support);
    std::uniform_int_distribution<Eigen::Index> pick(0, support - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index j = i < support ? i : pick(rng);
      x(i, 0) = pts(j, 0);
      w(j) += 1.0 / static_cast<double>(n);
    }
    Vector q(support);
    for (Eigen::Index i = 0; i < support; ++i) q(i) = u01(rng);
    q /= q.sum();
    const Vector theta = Vector::Constant(1, q.dot(pts.col(0)));

    const ExactProfile prof = exact_mmd_profile(model, theta, Dataset::unconditional(x), pts, kernel);
    const double primal = discrete_primal_profile(gram(pts, pts, kernel), w, model.psi(pts, theta));
    out.push_back({prof.value, primal});
  }
  return out;
}

}  // namespace mforge
