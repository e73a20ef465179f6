#include "mforge/validation.hpp"

#include "mforge/baselines.hpp"
#include "mforge/error.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

namespace mforge {

namespace {

KernelSpec safe_median_kernel(const Matrix& points) {
  try {
    return median_kernel(points);
  } catch (const DegenerateBandwidth&) {
    return KernelSpec(1.0, points.cols());
  }
}

}  // namespace

double hsic(const Matrix& residuals, const Matrix& conditioning, const KernelSpec& k_residual,
            const KernelSpec& k_conditioning) {
  const Eigen::Index n = residuals.rows();
  if (n < 4) throw InvalidInput("hsic needs at least 4 rows");
  if (conditioning.rows() != n) throw InvalidInput("hsic: row counts differ");
  Matrix k = gram(residuals, residuals, k_residual);
  const Matrix l = gram(conditioning, conditioning, k_conditioning);
  // H K H computed by double centering.
  const Vector row_mean = k.rowwise().mean();
  const double grand = row_mean.mean();
  k.colwise() -= row_mean;
  k.rowwise() -= row_mean.transpose();
  k.array() += grand;
  const double dn = static_cast<double>(n);
  return (k.array() * l.array()).sum() / (dn * dn);
}

double hsic(const Matrix& residuals, const Matrix& conditioning) {
  return hsic(residuals, conditioning, safe_median_kernel(residuals), safe_median_kernel(conditioning));
}

double hsic_batched(const Matrix& residuals, const Matrix& conditioning, Eigen::Index batch) {
  if (batch < 4) throw InvalidInput("hsic_batched: batch must be >= 4");
  const Eigen::Index n = residuals.rows();
  if (n <= batch) return hsic(residuals, conditioning);
  const KernelSpec kr = safe_median_kernel(residuals);
  const KernelSpec kc = safe_median_kernel(conditioning);
  double total = 0.0;
  int parts = 0;
  for (Eigen::Index b = 0; b < n; b += batch) {
    const Eigen::Index c = std::min(batch, n - b);
    if (c < 4) break;
    total += hsic(residuals.middleRows(b, c), conditioning.middleRows(b, c), kr, kc);
    ++parts;
  }
  return total / parts;
}

double mmr_metric(const MomentModel& model, const Vector& theta, const Dataset& data, const KernelSpec& kernel) {
  return mmr_objective(model, theta, data, kernel);
}

double mmr_metric_batched(const MomentModel& model, const Vector& theta, const Dataset& data,
                          const KernelSpec& kernel, Eigen::Index batch) {
  if (batch < 1) throw InvalidInput("mmr_metric_batched: batch must be >= 1");
  const Eigen::Index n = data.size();
  if (n <= batch) return mmr_metric(model, theta, data, kernel);
  double total = 0.0;
  int parts = 0;
  for (Eigen::Index b = 0; b < n; b += batch) {
    total += mmr_metric(model, theta, data.slice(b, std::min(batch, n - b)), kernel);
    ++parts;
  }
  return total / parts;
}

MetricKind parse_metric_kind(const std::string& name) {
  if (name == "hsic") return MetricKind::Hsic;
  if (name == "mmr") return MetricKind::Mmr;
  throw ConfigError("unknown validation metric '" + name + "'", "metric");
}

std::string metric_kind_name(MetricKind kind) { return kind == MetricKind::Hsic ? "hsic" : "mmr"; }

std::function<double(const Vector&)> make_metric(MetricKind kind, std::shared_ptr<const MomentModel> model,
                                                 Dataset val) {
  if (val.z_dim() == 0) throw InvalidInput("validation metrics need a conditioning variable");
  if (kind == MetricKind::Mmr) {
    const KernelSpec k = safe_median_kernel(val.z);
    return [model, val = std::move(val), k](const Vector& theta) {
      return mmr_metric_batched(*model, theta, val, k);
    };
  }
  return [model, val = std::move(val)](const Vector& theta) {
    return hsic_batched(model->psi(val.x, theta), val.z);
  };
}

GridSearchResult grid_search(const std::vector<std::string>& keys,
                             const std::function<double(std::size_t)>& score_cell, int jobs) {
  if (keys.empty()) throw InvalidInput("grid_search: no candidates");
  GridSearchResult res;
  res.cells.resize(keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      GridCellReport& cell = res.cells[i];
      cell.key = keys[i];
      try {
        cell.score = score_cell(i);
        cell.ok = std::isfinite(cell.score);
        if (!cell.ok) cell.error = "non-finite score";
      } catch (const Error& e) {
        cell.error = e.what();
      }
    }
  };
  const int nthreads = std::max(1, std::min<int>(jobs, static_cast<int>(keys.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  bool any = false;
  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    const GridCellReport& c = res.cells[i];
    if (!c.ok) continue;
    const GridCellReport& b = res.cells[res.best];
    if (!any || c.score < b.score || (c.score == b.score && c.key < b.key)) res.best = i;
    any = true;
  }
  if (!any) {
    std::ostringstream os;
    os << "grid_search: all " << keys.size() << " cells failed:";
    for (const auto& c : res.cells) os << "\n  " << c.key << ": " << c.error;
    throw Error(os.str());
  }
  return res;
}

}  // namespace mforge
