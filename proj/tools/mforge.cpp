// mforge: command-line driver for the moment-forge library.

#include "mforge/datagen.hpp"
#include "mforge/error.hpp"
#include "mforge/experiment.hpp"
#include "mforge/records.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>

namespace {

using namespace mforge;

struct Overrides {
  std::string config;
  std::string out;
  std::string seeds;
  std::string design;
  std::string estimator;
  int jobs = 0;
};

void add_common(CLI::App* cmd, Overrides& o, bool need_config) {
  auto* c = cmd->add_option("--config", o.config, "JSON experiment config");
  if (need_config) c->required();
  cmd->add_option("--out", o.out, "output path (default: stdout)");
  cmd->add_option("--seeds", o.seeds, "seed list, e.g. 0,1,2 or 0-19");
  cmd->add_option("--design", o.design, "override the config design");
  cmd->add_option("--estimator", o.estimator, "override the config estimator");
  cmd->add_option("--jobs", o.jobs, "worker threads (capped by MOMENT_FORGE_THREADS)");
}

ExperimentConfig load_config(const Overrides& o) {
  ExperimentConfig cfg = ExperimentConfig::load(o.config);
  if (!o.seeds.empty()) cfg.seeds = parse_seed_list(o.seeds);
  if (!o.design.empty()) {
    const NetworkIvOptions net = cfg.design.network;
    cfg.design = Design::parse(o.design);
    cfg.design.network = net;
  }
  if (!o.estimator.empty()) {
    if (std::find(kEstimators.begin(), kEstimators.end(), o.estimator) == kEstimators.end()) {
      throw ConfigError("unknown estimator '" + o.estimator + "'", "--estimator");
    }
    cfg.estimators = {o.estimator};
  }
  if (o.jobs > 0) cfg.jobs = o.jobs;
  cfg.validate();
  return cfg;
}

// Writes to --out when given, otherwise stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw ConfigError("cannot write '" + path + "'", "--out");
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

int report_failures(const std::vector<RunRecord>& records) {
  int failed = 0;
  for (const auto& r : records) {
    if (r.ok) continue;
    ++failed;
    std::cerr << "FAILED\tseed=" << r.seed << "\testimator=" << r.estimator << "\t" << r.error << '\n';
  }
  if (failed == 0) return 0;
  std::cerr << failed << " of " << records.size() << " runs failed\n";
  return 2;
}

int cmd_fit(const Overrides& o) {
  const ExperimentConfig cfg = load_config(o);
  Output out(o.out);
  std::vector<RunRecord> records;
  for (auto seed : cfg.seeds) {
    for (const auto& est : cfg.estimators) {
      std::cerr << "# seed=" << seed << " estimator=" << est << '\n';
      RunRecord r = run_one(cfg, est, seed, [](const TracePoint& p) { std::cerr << format_progress(p) << '\n'; });
      out.stream() << serialize_record(r) << '\n' << std::flush;
      if (r.ok) {
        std::fprintf(stderr, "seed=%llu\t%s\ttest_mse=%.6g\tselected=%s\n", static_cast<unsigned long long>(seed),
                     est.c_str(), r.test_mse, r.selected.empty() ? "-" : r.selected.c_str());
      }
      records.push_back(std::move(r));
    }
  }
  return report_failures(records);
}

int cmd_benchmark(const Overrides& o) {
  const ExperimentConfig cfg = load_config(o);
  Output out(o.out);
  std::mutex mu;
  const auto records = run_benchmark(cfg, cfg.jobs, [&](const RunRecord& r) {
    std::lock_guard<std::mutex> lock(mu);
    out.stream() << serialize_record(r) << '\n' << std::flush;
    std::cerr << "done\tseed=" << r.seed << '\t' << r.estimator << '\t' << (r.ok ? "ok" : "failed") << '\t'
              << r.test_mse << '\n';
  });
  return report_failures(records);
}

int cmd_table(const std::vector<std::string>& inputs, const std::string& csv_path, const std::string& out_path) {
  std::vector<RunRecord> records;
  for (const auto& path : inputs) {
    auto part = read_records(path);
    records.insert(records.end(), part.begin(), part.end());
  }
  const auto rows = aggregate(records);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw ConfigError("cannot write '" + csv_path + "'", "--csv");
    csv << table_csv(rows);
  }
  Output out(out_path);
  out.stream() << table_text(rows);
  return 0;
}

struct CheckOptions {
  int instances = 10;
  int support = 5;
  bool asymptotics = true;
  AsymptoticsOptions asym;
};

int cmd_check(const CheckOptions& c, const Overrides& o) {
  Output out(o.out);
  std::ostream& os = out.stream();
  bool pass = true;
  const std::uint64_t seed = o.seeds.empty() ? 0 : parse_seed_list(o.seeds).front();

  double worst = 0.0;
  for (const auto& d : duality_check(c.instances, c.support, seed)) {
    const double gap = std::abs(d.dual - d.primal);
    worst = std::max(worst, gap);
    os << "duality\tdual=" << d.dual << "\tprimal=" << d.primal << "\tgap=" << gap << '\n';
  }
  const bool dual_ok = worst <= 1e-4;
  pass = pass && dual_ok;
  os << "duality\tworst_gap=" << worst << '\t' << (dual_ok ? "PASS" : "FAIL") << '\n';

  if (c.asymptotics) {
    AsymptoticsOptions a = c.asym;
    a.seed = seed;
    if (o.jobs > 0) a.jobs = o.jobs;
    const AsymptoticsReport r = asymptotics_check(a);
    for (std::size_t i = 0; i < r.n_grid.size(); ++i) os << "asymptotics\tn=" << r.n_grid[i] << "\tmse=" << r.mse[i] << '\n';
    const bool slope_ok = r.slope >= -1.3 && r.slope <= -0.7;
    const bool var_ok = std::abs(r.variance_ratio - 1.0) <= 0.25;
    pass = pass && slope_ok && var_ok;
    os << "asymptotics\tslope=" << r.slope << '\t' << (slope_ok ? "PASS" : "FAIL") << '\n';
    os << "asymptotics\tscaled_variance=" << r.scaled_variance << "\txi0=" << r.xi0 << "\tratio=" << r.variance_ratio
       << '\t' << (var_ok ? "PASS" : "FAIL") << '\n';
  }
  return pass ? 0 : 2;
}

int cmd_datagen(const Overrides& o, long n, const std::string& noise) {
  if (o.design.empty()) throw ConfigError("datagen needs --design", "--design");
  if (n < 1) throw ConfigError("--n must be >= 1", "--n");
  Design d = Design::parse(o.design);
  if (noise == "std") d.network.noise_is_variance = false;
  else if (noise != "variance") throw ConfigError("--network-noise must be variance or std", "--network-noise");
  const auto seeds = o.seeds.empty() ? std::vector<std::uint64_t>{0} : parse_seed_list(o.seeds);
  if (seeds.size() > 1 && !o.out.empty()) {
    for (auto s : seeds) {
      std::ofstream f(o.out + "." + std::to_string(s) + ".csv");
      if (!f) throw ConfigError("cannot write under '" + o.out + "'", "--out");
      f << dataset_csv(d.generate(n, s));
    }
    return 0;
  }
  Output out(o.out);
  out.stream() << dataset_csv(d.generate(n, seeds.front()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moment-forge: kernel method of moments estimation"};
  app.set_version_flag("--version", mforge::library_version());
  app.require_subcommand(1);

  Overrides fit_o, bench_o, check_o, gen_o;
  auto* fit = app.add_subcommand("fit", "run each configured estimator on each seed, with progress");
  add_common(fit, fit_o, true);
  auto* bench = app.add_subcommand("benchmark", "seeds x estimators on a worker pool, one record per line");
  add_common(bench, bench_o, true);

  auto* table = app.add_subcommand("table", "aggregate records into mean and standard-error rows");
  std::vector<std::string> inputs;
  std::string csv_path, table_out;
  table->add_option("records", inputs, "record files")->required()->check(CLI::ExistingFile);
  table->add_option("--csv", csv_path, "also write CSV here");
  table->add_option("--out", table_out, "aligned text output (default: stdout)");

  auto* check = app.add_subcommand("check", "strong-duality oracle and asymptotic-rate check");
  CheckOptions copt;
  bool no_asym = false;
  check->add_option("--out", check_o.out, "report path (default: stdout)");
  check->add_option("--seeds", check_o.seeds, "first entry is the check seed");
  check->add_option("--jobs", check_o.jobs, "worker threads");
  check->add_option("--instances", copt.instances, "duality instances");
  check->add_option("--support", copt.support, "support points per duality instance");
  check->add_option("--replications", copt.asym.replications, "replications per sample size");
  check->add_option("--variance-replications", copt.asym.variance_replications, "replications at the largest n");
  check->add_option("--n-grid", copt.asym.n_grid, "sample sizes");
  check->add_flag("--skip-asymptotics", no_asym, "only run the duality oracle");

  auto* gen = app.add_subcommand("datagen", "write a synthetic dataset as CSV");
  long gen_n = 1000;
  std::string noise = "variance";
  gen->add_option("--design", gen_o.design, "design name")->required();
  gen->add_option("--n", gen_n, "rows");
  gen->add_option("--seeds", gen_o.seeds, "seeds (several write <out>.<seed>.csv)");
  gen->add_option("--out", gen_o.out, "output path (default: stdout)");
  gen->add_option("--network-noise", noise, "variance | std");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*fit) return cmd_fit(fit_o);
    if (*bench) return cmd_benchmark(bench_o);
    if (*table) return cmd_table(inputs, csv_path, table_out);
    if (*check) {
      copt.asymptotics = !no_asym;
      return cmd_check(copt, check_o);
    }
    if (*gen) return cmd_datagen(gen_o, gen_n, noise);
  } catch (const mforge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const mforge::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
