#pragma once

#include <cstdint>
#include <vector>

#include "datta/tensor.hpp"

namespace datta::diversity {

/// Outcome of scoring one batch against the running threshold.
struct DiversityGate {
  double score = 0.0;      // S_t, variance of discrepancy angles (radians^2)
  double threshold = 0.0;  // Q_t, running lambda-th percentile
  bool is_high = true;     // S_t >= Q_t; forced true during cold start
  bool in_cold_start = false;

  static DiversityGate forced(bool high) {
    DiversityGate g;
    g.is_high = high;
    return g;
  }
};

/// Append-only store of past diversity scores plus the percentile and
/// cold-start configuration. One cache per adaptation session.
struct DiversityCache {
  std::vector<double> scores;
  double lambda_pct = 50.0;  // percentile in (0,100)
  int t_init = 16;           // cold-start batch count
  int64_t window = 0;        // 0 = unbounded; otherwise percentile over the last N scores

  int64_t size() const { return static_cast<int64_t>(scores.size()); }
};

/// Discrepancy angle per sample: the angle between v_f = mu_source - f and
/// v_t = mu_source - mu_test, with f the sample's per-channel instance mean.
/// Angles are in [0, pi]; a vector with norm below 1e-12 yields 0 for that
/// sample.
std::vector<double> discrepancy_angles(const Tensor& instance_means, const Tensor& mu_source,
                                       const Tensor& mu_test);

/// Population variance of the angles. 0 for a single angle.
double diversity_score(const std::vector<double>& angles);

/// Nearest-rank percentile of the values: the element at 1-based index
/// ceil(pct/100 * n) of the sorted sequence.
double nearest_rank_percentile(std::vector<double> values, double pct);

/// Appends s as the t-th score and evaluates the gate. During the first
/// t_init batches the gate reports cold start with is_high = true; after
/// that is_high = (s >= Q_t) with Q_t the nearest-rank percentile of the
/// cached scores (all of them, or the trailing window when bounded).
DiversityGate cache_update(DiversityCache& cache, double s, int64_t t);

}  // namespace datta::diversity
