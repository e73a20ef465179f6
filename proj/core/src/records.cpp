#include "mforge/records.hpp"

#include "mforge/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <tuple>

namespace mforge {

using nlohmann::json;

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_of(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

std::string serialize_record(const RunRecord& r) {
  json j;
  j["config"] = json::parse(r.config);
  j["design"] = r.design;
  j["estimator"] = r.estimator;
  j["seed"] = r.seed;
  j["n_train"] = r.n_train;
  json theta = json::array();
  for (double v : r.theta) theta.push_back(number(v));
  j["theta"] = theta;
  j["theta_digest"] = r.theta_digest;
  j["test_mse"] = number(r.test_mse);
  j["metric"] = r.metric;
  j["val_metric"] = number(r.val_metric);
  j["selected"] = r.selected;
  json diag = json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = number(v);
  j["diagnostics"] = diag;
  j["version"] = r.version;
  j["ok"] = r.ok;
  j["error"] = r.error;
  j["timing"] = {{"wall_seconds", r.wall_seconds}};
  return j.dump();
}

RunRecord parse_record(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("malformed record: ") + e.what());
  }
  try {
    RunRecord r;
    r.config = j.at("config").dump();
    r.design = j.at("design").get<std::string>();
    r.estimator = j.at("estimator").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_train = j.at("n_train").get<long>();
    for (const auto& v : j.at("theta")) r.theta.push_back(number_of(v));
    r.theta_digest = j.at("theta_digest").get<std::string>();
    r.test_mse = number_of(j.at("test_mse"));
    r.metric = j.at("metric").get<std::string>();
    r.val_metric = number_of(j.at("val_metric"));
    r.selected = j.at("selected").get<std::string>();
    for (const auto& [k, v] : j.at("diagnostics").items()) r.diagnostics[k] = number_of(v);
    r.version = j.at("version").get<std::string>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    r.wall_seconds = j.at("timing").at("wall_seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("incomplete record: ") + e.what());
  }
}

std::string record_payload(const std::string& line) {
  json j = json::parse(line);
  j.erase("timing");
  return j.dump();
}

std::vector<RunRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open records file '" + path + "'");
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line));
  }
  return out;
}

std::string parameter_digest(const Vector& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    unsigned char bytes[sizeof(double)];
    const double v = params(i);
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MeanSe mean_se_one_pass(const std::vector<double>& xs) {
  MeanSe r;
  double m2 = 0.0;
  for (double x : xs) {
    ++r.count;
    const double delta = x - r.mean;
    r.mean += delta / static_cast<double>(r.count);
    m2 += delta * (x - r.mean);
  }
  if (r.count > 1) r.se = std::sqrt(m2 / static_cast<double>(r.count - 1) / static_cast<double>(r.count));
  return r;
}

MeanSe mean_se_two_pass(const std::vector<double>& xs) {
  MeanSe r;
  r.count = static_cast<long>(xs.size());
  if (r.count == 0) return r;
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(r.count);
  if (r.count > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(r.count - 1) / static_cast<double>(r.count));
  }
  return r;
}

std::vector<TableRow> aggregate(const std::vector<RunRecord>& records) {
  using Key = std::tuple<std::string, long, std::string>;
  std::map<Key, std::pair<std::vector<double>, long>> groups;
  for (const auto& r : records) {
    auto& g = groups[{r.design, r.n_train, r.estimator}];
    if (r.ok && std::isfinite(r.test_mse)) {
      g.first.push_back(r.test_mse);
    } else {
      ++g.second;
    }
  }
  std::vector<TableRow> rows;
  for (const auto& [key, g] : groups) {
    TableRow row;
    row.design = std::get<0>(key);
    row.n_train = std::get<1>(key);
    row.estimator = std::get<2>(key);
    row.mse = mean_se_one_pass(g.first);
    row.failures = g.second;
    rows.push_back(row);
  }
  return rows;
}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "design,n_train,estimator,runs,failures,mse_mean,mse_se\n";
  for (const auto& r : rows) {
    os << r.design << ',' << r.n_train << ',' << r.estimator << ',' << r.mse.count << ',' << r.failures << ','
       << r.mse.mean << ',' << r.mse.se << '\n';
  }
  return os.str();
}

std::string table_text(const std::vector<TableRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "design" << std::right << std::setw(8) << "n" << "  " << std::left
     << std::setw(10) << "estimator" << std::right << std::setw(6) << "runs" << "  " << "test MSE\n";
  for (const auto& r : rows) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(4) << r.mse.mean << " ± " << r.mse.se;
    os << std::left << std::setw(20) << r.design << std::right << std::setw(8) << r.n_train << "  " << std::left
       << std::setw(10) << r.estimator << std::right << std::setw(6) << r.mse.count << "  " << cell.str();
    if (r.failures > 0) os << "  (" << r.failures << " failed)";
    os << '\n';
  }
  return os.str();
}

}  // namespace mforge
