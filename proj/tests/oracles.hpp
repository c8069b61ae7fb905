// Independent reference implementations used to freeze expected values.
// Everything here is plain f64 and deliberately naive; none of it shares code
// with the library under test.
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace oracle {

struct Dims4 {
  int n, c, h, w;
};

// Valid cross-correlation, quadruple loop, f64.
std::vector<double> conv2d(const std::vector<double>& x, Dims4 xd, const std::vector<double>& k,
                           int cout, int kh, int kw, int stride);

// x[N,D] * w[D,K] + b[K], triple loop.
std::vector<double> matmul_bias(const std::vector<double>& x, int n, int d,
                                const std::vector<double>& w, int k,
                                const std::vector<double>& b);

// Two-pass biased mean/variance of a flat sequence.
std::pair<double, double> mean_var(const std::vector<double>& v);

// Mean Shannon entropy of rowwise softmax, direct formula without
// stabilization (valid at small logit magnitudes).
double softmax_entropy(const std::vector<double>& logits, int n, int k);

// Nearest-rank percentile by full sort: 1-based index ceil(pct/100 * n).
double nearest_rank_percentile(std::vector<double> values, double pct);

// Pearson correlation of the rank vectors.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// Sum over classes of (observed - expected)^2 / expected.
double chi2_statistic(const std::vector<int64_t>& counts);

// Monte-Carlo mean/variance of a Gaussian mixture, n draws.
std::pair<double, double> mc_mixture_moments(const std::vector<double>& weights,
                                             const std::vector<double>& means,
                                             const std::vector<double>& vars, int64_t n,
                                             uint64_t seed);

// f64 reference of the adaptation-time network: two conv blocks with frozen
// per-channel normalization statistics, ReLU, global average pooling, linear
// head, mean softmax entropy. Used as the finite-difference target.
struct RefTwoConvNet {
  Dims4 input_dims{};
  std::vector<double> input;

  int c1 = 0, k1 = 0, s1 = 1;
  std::vector<double> kernel1;
  std::vector<double> gamma1, beta1, mu1, var1;

  int c2 = 0, k2 = 0, s2 = 1;
  std::vector<double> kernel2;
  std::vector<double> gamma2, beta2, mu2, var2;

  int classes = 0;
  std::vector<double> head_w, head_b;
  double eps = 1e-5;

  double entropy() const;
};

// Central finite difference of fn at +/- h around *param.
template <typename Fn>
double central_difference(double* param, double h, Fn&& fn) {
  const double saved = *param;
  *param = saved + h;
  const double up = fn();
  *param = saved - h;
  const double down = fn();
  *param = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace oracle
