#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "datta/tensor.hpp"

namespace datta::diversity {
struct DiversityGate;
}

namespace datta::norm {

enum class Strategy { kSbn, kTbn, kAlphaBn, kIn, kIabn, kDabn, kUnmix };

Strategy strategy_from_string(const std::string& name);
std::string to_string(Strategy s);

/// Dead-zone handling for the shrink function. kShrink is the symmetric
/// soft-shrinkage reading; kLiteral keeps the published case list, which
/// returns x-z+threshold everywhere inside the dead zone.
enum class PsiMode { kShrink, kLiteral };

/// Scale applied to the sampling variances before they act as a shrink
/// threshold. kSqrt compares mean offsets against kappa standard errors;
/// kRaw keeps the variance-scale reading.
enum class ThresholdScale { kSqrt, kRaw };

struct StrategyParams {
  Strategy strategy = Strategy::kSbn;
  float alpha = 0.2f;   // dabn adjustment level; alpha_bn source weight
  float kappa = 4.0f;   // confidence level of the source statistics
  int unmix_k = 16;
  float unmix_alpha_init = 0.5f;
  float temperature = 0.07f;
  float lambda0 = 0.1f;
  int b0 = 64;
  PsiMode psi_mode = PsiMode::kShrink;
  ThresholdScale threshold_scale = ThresholdScale::kSqrt;
};

/// Frozen source statistics plus affine parameters for one BN site.
struct BNLayerState {
  Tensor mu_source;   // [C]
  Tensor var_source;  // [C], nonnegative
  Tensor gamma;       // [C]
  Tensor beta;        // [C]
  float eps = 1e-5f;
  StrategyParams params;

  int64_t channels() const { return mu_source.numel(); }
  void validate() const;
};

/// Per-batch statistics of a feature map at one BN site.
struct BatchStats {
  Tensor mu_test;       // [C] over batch+spatial
  Tensor var_test;      // [C], biased
  Tensor mu_instance;   // [N,C] over spatial
  Tensor var_instance;  // [N,C], biased
  int64_t spatial_count = 0;  // L = H*W
  bool degenerate_spatial = false;  // H*W == 1, instance variance is 0 by definition
};

/// K-component test-time normalization state.
struct UnMixState {
  int k = 0;
  Tensor component_means;  // [K,C]
  Tensor component_vars;   // [K,C]
  float momentum = 0.1f;
  float temperature = 0.07f;
  float alpha_init = 0.5f;
};

/// Biased (divide-by-count) means and variances, accumulated in f64.
BatchStats compute_batch_stats(const Tensor& f);

/// mu* = a*mu_source + (1-a)*mu_test, likewise for variances. a in [0,1].
std::pair<Tensor, Tensor> alpha_bn_stats(const BNLayerState& state, const BatchStats& stats,
                                         float a);

/// Variances of the sampling distribution of mean and variance at sample
/// size L: s_mu = var/L, s_sigma = 2*var^2/(L-1). Requires L >= 2.
std::pair<Tensor, Tensor> sampling_variances(const BNLayerState& state, int64_t L);

/// Shrink/pass-through selector used by the adapted statistics.
/// High diversity: soft-shrinkage of x-z at the given threshold.
/// Low diversity: returns y-z regardless of x.
float psi(float x_minus_z, float y_minus_z, float threshold, bool high_diversity,
          PsiMode mode = PsiMode::kShrink);

/// Diversity-adaptive statistics, Eq.-(4)/(5) style. Returns per-sample
/// [N,C] tensors. High branch corrects toward instance statistics through
/// psi; low branch is the alpha-BN combination with weight (1-alpha) on the
/// source side. Variances are floored at 0.
std::pair<Tensor, Tensor> dabn_stats(const BNLayerState& state, const BatchStats& stats,
                                     bool high_diversity, float alpha, float kappa,
                                     PsiMode psi_mode = PsiMode::kShrink,
                                     ThresholdScale threshold_scale = ThresholdScale::kSqrt);

/// The high-diversity branch applied unconditionally. alpha defaults to 1
/// (full correction of the out-of-range deviation).
std::pair<Tensor, Tensor> iabn_stats(const BNLayerState& state, const BatchStats& stats,
                                     float kappa, float alpha = 1.0f,
                                     PsiMode psi_mode = PsiMode::kShrink,
                                     ThresholdScale threshold_scale = ThresholdScale::kSqrt);

/// Normalizes f with the strategy recorded in state.params. Handles every
/// stateless strategy; kUnmix carries per-layer state and goes through
/// unmix_forward instead. Throws std::invalid_argument on kUnmix here.
Tensor normalize(const Tensor& f, const BNLayerState& state, const BatchStats& stats,
                 const diversity::DiversityGate& gate);

/// Mean and variance of a K-component mixture:
/// mu = sum w_k mu_k, var = sum w_k var_k + sum w_k mu_k^2 - mu^2.
/// Weights must be nonnegative and sum to 1 within 1e-6.
std::pair<double, double> mixture_moments(std::span<const double> weights,
                                          std::span<const double> means,
                                          std::span<const double> vars);

/// Seeds K components around the source statistics: means mu + zeta_k with
/// zeta_k ~ N(0, eps_c), eps_c = sqrt(alpha*K/(K-1)) * sd_c, and variances
/// (1-alpha) * var_c. Deterministic per seed.
UnMixState unmix_init(const BNLayerState& state, int k, float alpha_init, uint64_t seed);

/// Assignment probabilities [N,K]: softmax over components of the cosine
/// similarity between instance means and component means, at the state's
/// temperature. Zero-norm vectors contribute similarity 0.
Tensor unmix_assignments(const Tensor& instance_means, const UnMixState& um);

/// Per-sample normalization statistics [N,C] of the K-component layer:
/// cosine-similarity assignment, per-sample mixing, uniform mixture moments.
/// Also performs the EMA update of the component statistics.
std::pair<Tensor, Tensor> unmix_stats(const Tensor& f, const BNLayerState& state, UnMixState& um);

/// One forward through the K-component layer: unmix_stats followed by
/// gamma * (f - mu) / sqrt(var + 1e-6) + beta.
Tensor unmix_forward(const Tensor& f, const BNLayerState& state, UnMixState& um);

/// Batch-size-robust EMA momentum: 1 - (1 - lambda0)^(B/B0).
double momentum_rule(int batch_size, int b0, double lambda0);

}  // namespace datta::norm
