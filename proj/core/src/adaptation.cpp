#include "datta/adaptation.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace datta::adapt {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Scores the batch at the first BN site, updates the cache, applies any
/// forced-gate override.
diversity::DiversityGate score_gate(const Tensor& features, const norm::BatchStats& stats,
                                    const norm::BNLayerState& first_site,
                                    diversity::DiversityCache& cache,
                                    const AdaptationConfig& cfg) {
  std::vector<double> angles;
  if (cfg.per_activation) {
    const int64_t N = features.dim(0), C = features.dim(1),
                  HW = features.dim(2) * features.dim(3);
    Tensor rows({N * HW, C});
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        const float* src = features.ptr() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) rows.at(n * HW + i, c) = src[i];
      }
    angles = diversity::discrepancy_angles(rows, first_site.mu_source, stats.mu_test);
  } else {
    angles = diversity::discrepancy_angles(stats.mu_instance, first_site.mu_source, stats.mu_test);
  }
  const double s = diversity::diversity_score(angles);
  diversity::DiversityGate gate = diversity::cache_update(cache, s, cache.size() + 1);
  if (cfg.force_gate != ForceGate::kNone) {
    gate.is_high = cfg.force_gate == ForceGate::kHigh;
    gate.in_cold_start = false;
  }
  return gate;
}

StepOutcome run_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                     const AdaptationConfig& cfg, norm::Strategy strategy, bool gated_backward,
                     bool always_backward) {
  const auto start = Clock::now();
  cfg.validate();

  norm::Strategy effective = strategy;
  if (cfg.strategy_override) {
    if (gated_backward || always_backward) {
      if (*cfg.strategy_override != strategy) {
        fail("norm.strategy override only applies to forward-only methods");
      }
    } else {
      effective = *cfg.strategy_override;
    }
  }
  model.set_strategy(cfg.strategy_params(effective));
  if (effective == norm::Strategy::kUnmix && !model.sites()[0].unmix) {
    fail("unmix strategy requires initialized component state (use AdaptSession)");
  }

  const bool may_update = gated_backward || always_backward;
  ForwardOptions opts;
  opts.trainable_bn_affine = may_update;
  opts.eligible_bn_sites = cfg.eligible_sites(model.num_bn_sites());

  cache.lambda_pct = cfg.lambda_pct;
  cache.t_init = cfg.t_init;
  cache.window = cfg.dd_window;
  const GateFn gate_fn = [&](const Tensor& feat, const norm::BatchStats& stats) {
    return score_gate(feat, stats, model.sites()[0].state, cache, cfg);
  };

  Model::Forward fw = model.forward(batch, opts, gate_fn);

  StepOutcome out;
  out.gate = fw.gate;
  out.logits = fw.graph.value(fw.logits);
  out.predictions = argmax_rows(out.logits);

  bool do_backward = always_backward;
  if (gated_backward && !fw.gate.in_cold_start) {
    if (cfg.literal_indicator) {
      // published indicator I{S_t > Q_t}, strict
      do_backward = cfg.force_gate != ForceGate::kNone ? fw.gate.is_high
                                                       : fw.gate.score > fw.gate.threshold;
    } else {
      do_backward = !fw.gate.is_high;
    }
  }
  if (do_backward) {
    const autodiff::ValueId loss_id = fw.graph.softmax_entropy(fw.logits);
    out.loss = fw.graph.value(loss_id)[0];
    autodiff::GradMap grads = fw.graph.backward(loss_id);
    if (cfg.lr > 0.0f) {
      auto params = model.bn_affine_parameters(opts.eligible_bn_sites);
      autodiff::sgd_update(params, grads, cfg.lr);
    }
    out.did_backward = true;
  }
  out.elapsed_seconds = seconds_since(start);
  return out;
}

}  // namespace

Method method_from_string(const std::string& name) {
  if (name == "source") return Method::kSource;
  if (name == "bn_stats") return Method::kBnStats;
  if (name == "tent") return Method::kTent;
  if (name == "datta") return Method::kDatta;
  if (name == "iabn_only") return Method::kIabnOnly;
  if (name == "unmix") return Method::kUnmix;
  fail("unknown method '" + name + "' (expected source|bn_stats|tent|datta|iabn_only|unmix)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kSource: return "source";
    case Method::kBnStats: return "bn_stats";
    case Method::kTent: return "tent";
    case Method::kDatta: return "datta";
    case Method::kIabnOnly: return "iabn_only";
    case Method::kUnmix: return "unmix";
  }
  return "?";
}

void AdaptationConfig::validate() const {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) fail("adapt.alpha must lie in [0,1]");
  if (!(kappa > 0.0f)) fail("adapt.kappa must be positive");
  if (lr < 0.0f) fail("adapt.lr must be nonnegative");
  if (!(lambda_pct > 0.0 && lambda_pct < 100.0)) fail("dd.lambda_pct must lie in (0,100)");
  if (t_init < 0) fail("dd.t_init must be nonnegative");
  if (!(update_fraction > 0.0 && update_fraction <= 100.0)) {
    fail("adapt.update_fraction must lie in (0,100]");
  }
  if (!(bn_stats_alpha >= 0.0f && bn_stats_alpha <= 1.0f)) {
    fail("adapt.bn_stats_alpha must lie in [0,1]");
  }
  if (dd_window < 0) fail("dd.window must be nonnegative");
  if (unmix_k < 2) fail("norm.K must be >= 2");
}

int AdaptationConfig::eligible_sites(int num_bn_sites) const {
  const double m = update_fraction / 100.0;
  const int k = static_cast<int>(std::ceil(m * num_bn_sites));
  return std::max(1, std::min(k, num_bn_sites));
}

norm::StrategyParams AdaptationConfig::strategy_params(norm::Strategy strategy) const {
  norm::StrategyParams p;
  p.strategy = strategy;
  p.kappa = kappa;
  p.psi_mode = psi_mode;
  p.threshold_scale = threshold_scale;
  p.unmix_k = unmix_k;
  p.unmix_alpha_init = unmix_alpha_init;
  p.temperature = temperature;
  p.lambda0 = lambda0;
  p.b0 = b0;
  switch (strategy) {
    case norm::Strategy::kAlphaBn:
      p.alpha = bn_stats_alpha;
      break;
    case norm::Strategy::kIabn:
      p.alpha = iabn_alpha;
      break;
    default:
      p.alpha = alpha;
      break;
  }
  return p;
}

StepOutcome datta_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                       const AdaptationConfig& cfg) {
  return run_step(model, batch, cache, cfg, norm::Strategy::kDabn, /*gated=*/true,
                  /*always=*/false);
}

StepOutcome tent_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                      const AdaptationConfig& cfg) {
  return run_step(model, batch, cache, cfg, norm::Strategy::kTbn, /*gated=*/false,
                  /*always=*/true);
}

StepOutcome bn_stats_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                          const AdaptationConfig& cfg) {
  return run_step(model, batch, cache, cfg, norm::Strategy::kAlphaBn, false, false);
}

StepOutcome source_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                        const AdaptationConfig& cfg) {
  return run_step(model, batch, cache, cfg, norm::Strategy::kSbn, false, false);
}

StepOutcome iabn_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                      const AdaptationConfig& cfg) {
  return run_step(model, batch, cache, cfg, norm::Strategy::kIabn, false, false);
}

StepOutcome unmix_step(Model& model, const Tensor& batch, diversity::DiversityCache& cache,
                       const AdaptationConfig& cfg) {
  return run_step(model, batch, cache, cfg, norm::Strategy::kUnmix, false, false);
}

AdaptSession::AdaptSession(Model model, AdaptationConfig cfg, int batch_size)
    : model_(std::move(model)), cfg_(cfg) {
  cfg_.validate();
  cache_.lambda_pct = cfg_.lambda_pct;
  cache_.t_init = cfg_.t_init;
  cache_.window = cfg_.dd_window;
  const bool wants_unmix =
      cfg_.method == Method::kUnmix ||
      (cfg_.strategy_override && *cfg_.strategy_override == norm::Strategy::kUnmix);
  if (wants_unmix) {
    model_.set_strategy(cfg_.strategy_params(norm::Strategy::kUnmix));
    model_.init_unmix(/*seed=*/0x756d0ULL, batch_size);
  }
}

StepOutcome AdaptSession::step(const Tensor& batch) {
  switch (cfg_.method) {
    case Method::kSource: return source_step(model_, batch, cache_, cfg_);
    case Method::kBnStats: return bn_stats_step(model_, batch, cache_, cfg_);
    case Method::kTent: return tent_step(model_, batch, cache_, cfg_);
    case Method::kDatta: return datta_step(model_, batch, cache_, cfg_);
    case Method::kIabnOnly: return iabn_step(model_, batch, cache_, cfg_);
    case Method::kUnmix: return unmix_step(model_, batch, cache_, cfg_);
  }
  fail("AdaptSession: unknown method");
}

}  // namespace datta::adapt
