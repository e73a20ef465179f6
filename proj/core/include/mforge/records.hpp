#pragma once

#include "mforge/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mforge {

// One estimation run, serialized as a single JSON line. `config` holds the
// canonical JSON text of the run's configuration. Fields under "timing"
// are the only ones allowed to differ between repeated runs.
struct RunRecord {
  std::string config = "{}";
  std::string design;
  std::string estimator;
  std::uint64_t seed = 0;
  long n_train = 0;
  std::vector<double> theta;  // empty when only the digest is kept
  std::string theta_digest;
  double test_mse = 0.0;
  std::string metric;
  double val_metric = 0.0;
  std::string selected;  // winning grid cell key, if any
  std::map<std::string, double> diagnostics;
  std::string version;
  bool ok = true;
  std::string error;
  double wall_seconds = 0.0;

  bool operator==(const RunRecord&) const = default;
};

std::string serialize_record(const RunRecord& r);
RunRecord parse_record(const std::string& line);
// The record line with its "timing" object removed.
std::string record_payload(const std::string& line);

std::vector<RunRecord> read_records(const std::string& path);

// FNV-1a over the IEEE-754 bytes of the parameters, as 16 hex digits.
std::string parameter_digest(const Vector& params);

// Mean and standard error (sample std / sqrt(k)) of a sample.
struct MeanSe {
  long count = 0;
  double mean = 0.0;
  double se = 0.0;
};
MeanSe mean_se_one_pass(const std::vector<double>& xs);  // Welford
MeanSe mean_se_two_pass(const std::vector<double>& xs);

struct TableRow {
  std::string design;
  std::string estimator;
  long n_train = 0;
  MeanSe mse;
  long failures = 0;
};

// Groups successful records by (design, n_train, estimator) in sorted order.
std::vector<TableRow> aggregate(const std::vector<RunRecord>& records);
std::string table_csv(const std::vector<TableRow>& rows);
std::string table_text(const std::vector<TableRow>& rows);

}  // namespace mforge
