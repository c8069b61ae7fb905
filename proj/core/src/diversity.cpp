#include "datta/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace datta::diversity {

std::vector<double> discrepancy_angles(const Tensor& instance_means, const Tensor& mu_source,
                                       const Tensor& mu_test) {
  if (instance_means.rank() != 2) {
    throw std::invalid_argument("discrepancy_angles: instance means must be [N,C], got " +
                                instance_means.shape_str());
  }
  const int64_t N = instance_means.dim(0);
  const int64_t C = instance_means.dim(1);
  if (C < 2) throw std::invalid_argument("discrepancy_angles: needs C >= 2 channels");
  if (mu_source.numel() != C || mu_test.numel() != C) {
    throw std::invalid_argument("discrepancy_angles: channel count mismatch");
  }

  constexpr double kDegenerate = 1e-12;
  std::vector<double> vt(static_cast<size_t>(C));
  double vt_norm2 = 0.0;
  for (int64_t c = 0; c < C; ++c) {
    vt[static_cast<size_t>(c)] =
        static_cast<double>(mu_source[c]) - static_cast<double>(mu_test[c]);
    vt_norm2 += vt[static_cast<size_t>(c)] * vt[static_cast<size_t>(c)];
  }
  const double vt_norm = std::sqrt(vt_norm2);

  std::vector<double> angles(static_cast<size_t>(N), 0.0);
  if (vt_norm < kDegenerate) return angles;  // degenerate test vector: all angles 0

  for (int64_t n = 0; n < N; ++n) {
    double dot = 0.0, vf_norm2 = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      const double vf =
          static_cast<double>(mu_source[c]) - static_cast<double>(instance_means.at(n, c));
      dot += vf * vt[static_cast<size_t>(c)];
      vf_norm2 += vf * vf;
    }
    const double vf_norm = std::sqrt(vf_norm2);
    if (vf_norm < kDegenerate) continue;  // angle defined as 0
    double cosv = dot / (vf_norm * vt_norm);
    cosv = std::clamp(cosv, -1.0, 1.0);
    angles[static_cast<size_t>(n)] = std::acos(cosv);
  }
  return angles;
}

double diversity_score(const std::vector<double>& angles) {
  const size_t n = angles.size();
  if (n == 0) throw std::invalid_argument("diversity_score: empty angle list");
  if (n == 1) return 0.0;
  double mean = 0.0;
  for (double a : angles) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : angles) var += (a - mean) * (a - mean);
  return var / static_cast<double>(n);
}

double nearest_rank_percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("nearest_rank_percentile: empty input");
  if (!(pct > 0.0 && pct < 100.0)) {
    throw std::invalid_argument("nearest_rank_percentile: pct must be in (0,100)");
  }
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<int64_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<int64_t>(rank, 1, static_cast<int64_t>(values.size()));
  return values[static_cast<size_t>(rank - 1)];
}

DiversityGate cache_update(DiversityCache& cache, double s, int64_t t) {
  if (t != cache.size() + 1) {
    throw std::invalid_argument("cache_update: t must increment by 1 per call");
  }
  cache.scores.push_back(s);

  std::vector<double> view;
  if (cache.window > 0 && cache.size() > cache.window) {
    view.assign(cache.scores.end() - cache.window, cache.scores.end());
  } else {
    view = cache.scores;
  }

  DiversityGate gate;
  gate.score = s;
  gate.threshold = nearest_rank_percentile(std::move(view), cache.lambda_pct);
  if (t <= cache.t_init) {
    gate.in_cold_start = true;
    gate.is_high = true;  // robust default while the cache warms up
  } else {
    gate.in_cold_start = false;
    gate.is_high = s >= gate.threshold;
  }
  return gate;
}

}  // namespace datta::diversity
