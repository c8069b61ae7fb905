#include "datta/normalizers.hpp"

#include <cmath>
#include <stdexcept>

#include "datta/diversity.hpp"
#include "datta/rng.hpp"

namespace datta::norm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_feature_map(const Tensor& f, int64_t channels, const char* what) {
  if (f.rank() != 4) fail(std::string(what) + ": feature map must be [N,C,H,W], got " + f.shape_str());
  if (f.dim(1) != channels) {
    fail(std::string(what) + ": channel count " + std::to_string(f.dim(1)) +
         " does not match layer state " + std::to_string(channels));
  }
}

}  // namespace

Strategy strategy_from_string(const std::string& name) {
  if (name == "sbn") return Strategy::kSbn;
  if (name == "tbn") return Strategy::kTbn;
  if (name == "alpha_bn") return Strategy::kAlphaBn;
  if (name == "in") return Strategy::kIn;
  if (name == "iabn") return Strategy::kIabn;
  if (name == "dabn") return Strategy::kDabn;
  if (name == "unmix") return Strategy::kUnmix;
  fail("unknown norm strategy '" + name + "' (expected sbn|tbn|alpha_bn|in|iabn|dabn|unmix)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kSbn: return "sbn";
    case Strategy::kTbn: return "tbn";
    case Strategy::kAlphaBn: return "alpha_bn";
    case Strategy::kIn: return "in";
    case Strategy::kIabn: return "iabn";
    case Strategy::kDabn: return "dabn";
    case Strategy::kUnmix: return "unmix";
  }
  return "?";
}

void BNLayerState::validate() const {
  const int64_t C = mu_source.numel();
  if (var_source.numel() != C || gamma.numel() != C || beta.numel() != C) {
    fail("BNLayerState: mu/var/gamma/beta must all have length C");
  }
  for (int64_t c = 0; c < C; ++c) {
    if (var_source[c] < 0.0f) fail("BNLayerState: negative source variance");
  }
}

BatchStats compute_batch_stats(const Tensor& f) {
  if (f.rank() != 4) fail("compute_batch_stats: expected [N,C,H,W], got " + f.shape_str());
  const int64_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  if (N < 1) fail("compute_batch_stats: empty batch");

  BatchStats out;
  out.spatial_count = HW;
  out.degenerate_spatial = HW == 1;
  out.mu_instance = Tensor({N, C});
  out.var_instance = Tensor({N, C});
  out.mu_test = Tensor({C});
  out.var_test = Tensor({C});

  // Two-pass per (n,c) in f64; batch stats pool all N*HW elements per channel.
  std::vector<double> ch_sum(static_cast<size_t>(C), 0.0);
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const float* p = f.ptr() + (n * C + c) * HW;
      double s = 0.0;
      for (int64_t i = 0; i < HW; ++i) s += p[i];
      const double mean = s / static_cast<double>(HW);
      double ss = 0.0;
      for (int64_t i = 0; i < HW; ++i) {
        const double d = p[i] - mean;
        ss += d * d;
      }
      out.mu_instance.at(n, c) = static_cast<float>(mean);
      out.var_instance.at(n, c) = static_cast<float>(ss / static_cast<double>(HW));
      ch_sum[static_cast<size_t>(c)] += s;
    }
  }
  for (int64_t c = 0; c < C; ++c) {
    const double mean = ch_sum[static_cast<size_t>(c)] / static_cast<double>(N * HW);
    double ss = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const float* p = f.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        const double d = p[i] - mean;
        ss += d * d;
      }
    }
    out.mu_test[c] = static_cast<float>(mean);
    out.var_test[c] = static_cast<float>(ss / static_cast<double>(N * HW));
  }
  return out;
}

std::pair<Tensor, Tensor> alpha_bn_stats(const BNLayerState& state, const BatchStats& stats,
                                         float a) {
  if (!(a >= 0.0f && a <= 1.0f)) fail("alpha_bn_stats: a must lie in [0,1]");
  const int64_t C = state.channels();
  Tensor mu({C}), var({C});
  for (int64_t c = 0; c < C; ++c) {
    mu[c] = a * state.mu_source[c] + (1.0f - a) * stats.mu_test[c];
    var[c] = a * state.var_source[c] + (1.0f - a) * stats.var_test[c];
  }
  return {std::move(mu), std::move(var)};
}

std::pair<Tensor, Tensor> sampling_variances(const BNLayerState& state, int64_t L) {
  if (L < 2) fail("sampling_variances: L must be >= 2 (got " + std::to_string(L) + ")");
  const int64_t C = state.channels();
  Tensor s_mu({C}), s_sigma({C});
  for (int64_t c = 0; c < C; ++c) {
    const double v = state.var_source[c];
    s_mu[c] = static_cast<float>(v / static_cast<double>(L));
    s_sigma[c] = static_cast<float>(2.0 * v * v / static_cast<double>(L - 1));
  }
  return {std::move(s_mu), std::move(s_sigma)};
}

float psi(float x_minus_z, float y_minus_z, float threshold, bool high_diversity, PsiMode mode) {
  if (!high_diversity) return y_minus_z;
  if (mode == PsiMode::kLiteral) {
    // Published case list: the dead zone collapses to the single point
    // x-z == threshold; below it the third case applies.
    if (x_minus_z > threshold) return x_minus_z - threshold;
    if (x_minus_z < threshold) return x_minus_z + threshold;
    return 0.0f;
  }
  if (x_minus_z > threshold) return x_minus_z - threshold;
  if (x_minus_z < -threshold) return x_minus_z + threshold;
  return 0.0f;
}

namespace {

std::pair<Tensor, Tensor> dabn_high_branch(const BNLayerState& state, const BatchStats& stats,
                                           float alpha, float kappa, PsiMode psi_mode,
                                           ThresholdScale threshold_scale) {
  const int64_t C = state.channels();
  const int64_t N = stats.mu_instance.dim(0);
  auto [s_mu, s_sigma] = sampling_variances(state, stats.spatial_count);

  Tensor mu({N, C}), var({N, C});
  for (int64_t c = 0; c < C; ++c) {
    float thr_mu = kappa * s_mu[c];
    float thr_sigma = kappa * s_sigma[c];
    if (threshold_scale == ThresholdScale::kSqrt) {
      thr_mu = kappa * std::sqrt(s_mu[c]);
      thr_sigma = kappa * std::sqrt(s_sigma[c]);
    }
    for (int64_t n = 0; n < N; ++n) {
      const float dm = stats.mu_instance.at(n, c) - state.mu_source[c];
      const float dv = stats.var_instance.at(n, c) - state.var_source[c];
      mu.at(n, c) = state.mu_source[c] +
                    alpha * psi(dm, stats.mu_test[c] - state.mu_source[c], thr_mu, true, psi_mode);
      float v = state.var_source[c] +
                alpha * psi(dv, stats.var_test[c] - state.var_source[c], thr_sigma, true, psi_mode);
      var.at(n, c) = std::max(v, 0.0f);
    }
  }
  return {std::move(mu), std::move(var)};
}

}  // namespace

std::pair<Tensor, Tensor> dabn_stats(const BNLayerState& state, const BatchStats& stats,
                                     bool high_diversity, float alpha, float kappa,
                                     PsiMode psi_mode, ThresholdScale threshold_scale) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) fail("dabn_stats: alpha must lie in [0,1]");
  if (!(kappa > 0.0f)) fail("dabn_stats: kappa must be positive");
  if (high_diversity) {
    return dabn_high_branch(state, stats, alpha, kappa, psi_mode, threshold_scale);
  }
  // Low diversity: psi passes y-z, so the correction collapses to the
  // alpha-BN combination with weight (1-alpha) on the source side.
  const int64_t C = state.channels();
  const int64_t N = stats.mu_instance.dim(0);
  Tensor mu({N, C}), var({N, C});
  for (int64_t c = 0; c < C; ++c) {
    const float m = (1.0f - alpha) * state.mu_source[c] + alpha * stats.mu_test[c];
    const float v =
        std::max((1.0f - alpha) * state.var_source[c] + alpha * stats.var_test[c], 0.0f);
    for (int64_t n = 0; n < N; ++n) {
      mu.at(n, c) = m;
      var.at(n, c) = v;
    }
  }
  return {std::move(mu), std::move(var)};
}

std::pair<Tensor, Tensor> iabn_stats(const BNLayerState& state, const BatchStats& stats,
                                     float kappa, float alpha, PsiMode psi_mode,
                                     ThresholdScale threshold_scale) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) fail("iabn_stats: alpha must lie in [0,1]");
  if (!(kappa > 0.0f)) fail("iabn_stats: kappa must be positive");
  return dabn_high_branch(state, stats, alpha, kappa, psi_mode, threshold_scale);
}

namespace {

Tensor apply_norm_per_channel(const Tensor& f, const BNLayerState& state, const Tensor& mu,
                              const Tensor& var) {
  const int64_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  Tensor out(f.shape());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const float m = mu[c];
      const float inv = 1.0f / std::sqrt(var[c] + state.eps);
      const float g = state.gamma[c], b = state.beta[c];
      const float* src = f.ptr() + (n * C + c) * HW;
      float* dst = out.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) dst[i] = g * (src[i] - m) * inv + b;
    }
  }
  return out;
}

Tensor apply_norm_per_sample(const Tensor& f, const BNLayerState& state, const Tensor& mu,
                             const Tensor& var, float eps) {
  const int64_t N = f.dim(0), C = f.dim(1), HW = f.dim(2) * f.dim(3);
  Tensor out(f.shape());
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const float m = mu.at(n, c);
      const float inv = 1.0f / std::sqrt(var.at(n, c) + eps);
      const float g = state.gamma[c], b = state.beta[c];
      const float* src = f.ptr() + (n * C + c) * HW;
      float* dst = out.ptr() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) dst[i] = g * (src[i] - m) * inv + b;
    }
  }
  return out;
}

}  // namespace

Tensor normalize(const Tensor& f, const BNLayerState& state, const BatchStats& stats,
                 const diversity::DiversityGate& gate) {
  check_feature_map(f, state.channels(), "normalize");
  const StrategyParams& p = state.params;
  switch (p.strategy) {
    case Strategy::kSbn:
      return apply_norm_per_channel(f, state, state.mu_source, state.var_source);
    case Strategy::kTbn:
      return apply_norm_per_channel(f, state, stats.mu_test, stats.var_test);
    case Strategy::kAlphaBn: {
      auto [mu, var] = alpha_bn_stats(state, stats, p.alpha);
      return apply_norm_per_channel(f, state, mu, var);
    }
    case Strategy::kIn:
      return apply_norm_per_sample(f, state, stats.mu_instance, stats.var_instance, state.eps);
    case Strategy::kIabn: {
      auto [mu, var] = iabn_stats(state, stats, p.kappa, p.alpha, p.psi_mode, p.threshold_scale);
      return apply_norm_per_sample(f, state, mu, var, state.eps);
    }
    case Strategy::kDabn: {
      auto [mu, var] = dabn_stats(state, stats, gate.is_high, p.alpha, p.kappa, p.psi_mode,
                                  p.threshold_scale);
      return apply_norm_per_sample(f, state, mu, var, state.eps);
    }
    case Strategy::kUnmix:
      fail("normalize: unmix carries per-layer state, use unmix_forward");
  }
  fail("normalize: unknown strategy tag");
}

std::pair<double, double> mixture_moments(std::span<const double> weights,
                                          std::span<const double> means,
                                          std::span<const double> vars) {
  const size_t k = weights.size();
  if (k == 0 || means.size() != k || vars.size() != k) {
    fail("mixture_moments: weights/means/vars must have equal nonzero length");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) fail("mixture_moments: negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-6) fail("mixture_moments: weights must sum to 1");

  double mu = 0.0;
  for (size_t i = 0; i < k; ++i) mu += weights[i] * means[i];
  double var = 0.0;
  for (size_t i = 0; i < k; ++i) var += weights[i] * vars[i] + weights[i] * means[i] * means[i];
  var -= mu * mu;
  return {mu, var};
}

UnMixState unmix_init(const BNLayerState& state, int k, float alpha_init, uint64_t seed) {
  if (k < 2) fail("unmix_init: needs K >= 2 components");
  if (!(alpha_init > 0.0f && alpha_init < 1.0f)) fail("unmix_init: alpha must lie in (0,1)");
  const int64_t C = state.channels();

  UnMixState um;
  um.k = k;
  um.alpha_init = alpha_init;
  um.temperature = state.params.temperature;
  um.momentum = static_cast<float>(momentum_rule(state.params.b0, state.params.b0,
                                                 state.params.lambda0));
  um.component_means = Tensor({k, C});
  um.component_vars = Tensor({k, C});

  Rng rng = Rng::fork(seed, 0x756e6d6978ULL);  // dedicated stream for the init noise
  const double scale = std::sqrt(static_cast<double>(alpha_init) * k / (k - 1));
  for (int64_t c = 0; c < C; ++c) {
    const double sd = std::sqrt(static_cast<double>(state.var_source[c]));
    const double eps_c = scale * sd;
    for (int i = 0; i < k; ++i) {
      um.component_means.at(i, c) =
          static_cast<float>(static_cast<double>(state.mu_source[c]) + eps_c * rng.normal());
      um.component_vars.at(i, c) =
          static_cast<float>((1.0 - static_cast<double>(alpha_init)) * state.var_source[c]);
    }
  }
  return um;
}

Tensor unmix_assignments(const Tensor& instance_means, const UnMixState& um) {
  if (instance_means.rank() != 2) fail("unmix_assignments: instance means must be [N,C]");
  const int64_t N = instance_means.dim(0), C = instance_means.dim(1);
  const int K = um.k;
  if (K < 2) fail("unmix_assignments: state not initialized");
  if (um.component_means.dim(1) != C) fail("unmix_assignments: channel mismatch");

  Tensor p({N, static_cast<int64_t>(K)});
  for (int64_t n = 0; n < N; ++n) {
    double inst_norm2 = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      const double v = instance_means.at(n, c);
      inst_norm2 += v * v;
    }
    const double inst_norm = std::sqrt(inst_norm2);
    std::vector<double> sim(static_cast<size_t>(K), 0.0);
    for (int i = 0; i < K; ++i) {
      double dot = 0.0, comp_norm2 = 0.0;
      for (int64_t c = 0; c < C; ++c) {
        const double cm = um.component_means.at(i, c);
        dot += cm * static_cast<double>(instance_means.at(n, c));
        comp_norm2 += cm * cm;
      }
      const double comp_norm = std::sqrt(comp_norm2);
      // zero-norm vectors: similarity defined as 0 for that pair
      sim[static_cast<size_t>(i)] =
          (inst_norm < 1e-12 || comp_norm < 1e-12) ? 0.0 : dot / (inst_norm * comp_norm);
    }
    double mx = sim[0];
    for (int i = 1; i < K; ++i) mx = std::max(mx, sim[static_cast<size_t>(i)]);
    double z = 0.0;
    for (int i = 0; i < K; ++i)
      z += std::exp((sim[static_cast<size_t>(i)] - mx) / um.temperature);
    for (int i = 0; i < K; ++i)
      p.at(n, i) = static_cast<float>(std::exp((sim[static_cast<size_t>(i)] - mx) / um.temperature) / z);
  }
  return p;
}

std::pair<Tensor, Tensor> unmix_stats(const Tensor& f, const BNLayerState& state, UnMixState& um) {
  check_feature_map(f, state.channels(), "unmix_stats");
  if (um.k < 2) fail("unmix_stats: state not initialized");
  const int64_t N = f.dim(0), C = f.dim(1);
  const int K = um.k;
  const BatchStats stats = compute_batch_stats(f);
  const Tensor p = unmix_assignments(stats.mu_instance, um);

  // Per-sample mixing of instance statistics into each component, then the
  // uniform-weight mixture moments per sample.
  Tensor mu({N, C}), var({N, C});
  Tensor mean_hat_mean({static_cast<int64_t>(K), C});  // averaged over the batch, for the EMA
  Tensor mean_hat_var({static_cast<int64_t>(K), C});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      double m1 = 0.0, m2 = 0.0, v1 = 0.0;
      for (int i = 0; i < K; ++i) {
        const double pi = p.at(n, i);
        const double hm = (1.0 - pi) * um.component_means.at(i, c) +
                          pi * static_cast<double>(stats.mu_instance.at(n, c));
        const double hv = (1.0 - pi) * um.component_vars.at(i, c) +
                          pi * static_cast<double>(stats.var_instance.at(n, c));
        m1 += hm;
        m2 += hm * hm;
        v1 += hv;
        mean_hat_mean.at(i, c) += static_cast<float>(hm / N);
        mean_hat_var.at(i, c) += static_cast<float>(hv / N);
      }
      const double mean = m1 / K;
      mu.at(n, c) = static_cast<float>(mean);
      var.at(n, c) = static_cast<float>(std::max(v1 / K + m2 / K - mean * mean, 0.0));
    }
  }

  // EMA update of the component statistics toward the batch-averaged mixes.
  for (int i = 0; i < K; ++i) {
    for (int64_t c = 0; c < C; ++c) {
      um.component_means.at(i, c) +=
          um.momentum * (mean_hat_mean.at(i, c) - um.component_means.at(i, c));
      um.component_vars.at(i, c) +=
          um.momentum * (mean_hat_var.at(i, c) - um.component_vars.at(i, c));
    }
  }
  return {std::move(mu), std::move(var)};
}

Tensor unmix_forward(const Tensor& f, const BNLayerState& state, UnMixState& um) {
  auto [mu, var] = unmix_stats(f, state, um);
  constexpr float kUnmixEps = 1e-6f;
  return apply_norm_per_sample(f, state, mu, var, kUnmixEps);
}

double momentum_rule(int batch_size, int b0, double lambda0) {
  if (batch_size < 1) fail("momentum_rule: batch size must be >= 1");
  if (b0 < 1) fail("momentum_rule: B0 must be >= 1");
  if (!(lambda0 > 0.0 && lambda0 < 1.0)) fail("momentum_rule: lambda0 must lie in (0,1)");
  if (batch_size == b0) return lambda0;  // unit exponent, keep it exact
  return 1.0 - std::pow(1.0 - lambda0, static_cast<double>(batch_size) / b0);
}

}  // namespace datta::norm
