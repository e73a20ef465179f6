#pragma once

#include "mforge/kernels.hpp"
#include "mforge/moment_model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mforge {

inline constexpr Eigen::Index kMetricBatch = 2000;

// Biased HSIC (1/n^2) tr(K H L H), K on residuals and L on the
// conditioning variable. The bandwidths are median heuristics of each
// input; a constant input falls back to bandwidth 1 (its centered Gram
// is zero either way).
double hsic(const Matrix& residuals, const Matrix& conditioning);
double hsic(const Matrix& residuals, const Matrix& conditioning, const KernelSpec& k_residual,
            const KernelSpec& k_conditioning);

// Average of hsic over consecutive partitions of at most `batch` rows.
// Bandwidths are computed once on the full inputs.
double hsic_batched(const Matrix& residuals, const Matrix& conditioning, Eigen::Index batch = kMetricBatch);

// (1/n^2) sum_ij psi_i^T K(z_i, z_j) psi_j on held-out data.
double mmr_metric(const MomentModel& model, const Vector& theta, const Dataset& data, const KernelSpec& kernel);
double mmr_metric_batched(const MomentModel& model, const Vector& theta, const Dataset& data,
                          const KernelSpec& kernel, Eigen::Index batch = kMetricBatch);

enum class MetricKind { Hsic, Mmr };
MetricKind parse_metric_kind(const std::string& name);
std::string metric_kind_name(MetricKind kind);

// Validation score of theta on `val` (lower is better); kernels from `val`.
std::function<double(const Vector&)> make_metric(MetricKind kind, std::shared_ptr<const MomentModel> model,
                                                 Dataset val);

struct GridCellReport {
  std::string key;
  bool ok = false;
  double score = 0.0;
  std::string error;
};

struct GridSearchResult {
  std::size_t best = 0;
  std::vector<GridCellReport> cells;
};

// Scores every cell (score_cell(i) fits and validates cell i; a thrown
// mforge::Error marks the cell failed) and returns the argmin score. Ties
// go to the lexicographically smallest key. Cells run on up to `jobs`
// threads; the result does not depend on `jobs`.
GridSearchResult grid_search(const std::vector<std::string>& keys,
                             const std::function<double(std::size_t)>& score_cell, int jobs = 1);

}  // namespace mforge
