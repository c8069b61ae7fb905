#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datta/diversity.hpp"
#include "datta/model.hpp"
#include "datta/normalizers.hpp"
#include "datta/tensor.hpp"

namespace datta::adapt {

enum class Method { kSource, kBnStats, kTent, kDatta, kIabnOnly, kUnmix };

Method method_from_string(const std::string& name);
std::string to_string(Method m);

/// Test-time switch used by ablations and the property suites; the gate's
/// decision is replaced after the score is cached.
enum class ForceGate { kNone, kHigh, kLow };

struct AdaptationConfig {
  Method method = Method::kDatta;
  float alpha = 0.2f;           // DABN adjustment level
  float kappa = 4.0f;           // confidence level of the source statistics
  float lr = 1e-4f;             // SGD step on BN affine parameters
  double lambda_pct = 50.0;     // diversity threshold percentile
  int t_init = 16;              // cold-start batches
  double update_fraction = 100.0;  // m% of BN sites eligible for updates
  float bn_stats_alpha = 0.5f;  // source weight of the bn_stats baseline
  float iabn_alpha = 1.0f;      // full correction, as in the instance-aware baseline

  // dd.* options
  bool per_activation = false;  // angle granularity
  int64_t dd_window = 0;        // 0 = unbounded score cache

  // ablation switches
  ForceGate force_gate = ForceGate::kNone;
  bool literal_indicator = false;  // update on S_t > Q_t instead of the prose reading
  norm::PsiMode psi_mode = norm::PsiMode::kShrink;
  norm::ThresholdScale threshold_scale = norm::ThresholdScale::kSqrt;

  // unmix strategy parameters
  int unmix_k = 16;
  float unmix_alpha_init = 0.5f;
  float temperature = 0.07f;
  float lambda0 = 0.1f;
  int b0 = 64;

  // Replaces the normalizer of the forward-only methods (source, bn_stats,
  // iabn_only); datta and tent keep their defining strategies.
  std::optional<norm::Strategy> strategy_override;

  void validate() const;
  int eligible_sites(int num_bn_sites) const;
  norm::StrategyParams strategy_params(norm::Strategy strategy) const;
};

struct StepOutcome {
  std::vector<int> predictions;
  diversity::DiversityGate gate;
  bool did_backward = false;
  std::optional<float> loss;
  double elapsed_seconds = 0.0;
  Tensor logits;  // pre-update logits, kept for the property suites
};

/// One DATTA step: a single forward that scores diversity at the first BN
/// site, normalizes every site with the gated statistics, and fine-tunes the
/// eligible gamma/beta only on low-diversity batches after cold start.
/// Predictions always come from the pre-update forward.
StepOutcome datta_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                       const AdaptationConfig& cfg);

/// Entropy minimization baseline: test-batch statistics everywhere and an
/// unconditional backward on the eligible affine parameters.
StepOutcome tent_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                      const AdaptationConfig& cfg);

/// Source/test statistics combination, no backward.
StepOutcome bn_stats_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                          const AdaptationConfig& cfg);

/// Frozen source statistics, no test-time state touched.
StepOutcome source_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                        const AdaptationConfig& cfg);

/// Instance-aware correction applied unconditionally, no backward.
StepOutcome iabn_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                      const AdaptationConfig& cfg);

/// K-component test-time normalization, no backward.
StepOutcome unmix_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                       const AdaptationConfig& cfg);

/// Owns one model clone and one diversity cache; dispatches per method.
class AdaptSession {
 public:
  AdaptSession(Model model, AdaptationConfig cfg, int batch_size);

  StepOutcome step(const Tensor& batch);
  Model& model() { return model_; }
  const diversity::DiversityCache& cache() const { return cache_; }

 private:
  Model model_;
  AdaptationConfig cfg_;
  diversity::DiversityCache cache_;
};

}  // namespace datta::adapt
