#include "datta/model.hpp"

#include <cmath>
#include <stdexcept>

#include "datta/rng.hpp"

namespace datta::adapt {

namespace {

constexpr float kRunningMomentum = 0.1f;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

void ModelSpec::validate() const {
  if (convs.empty()) fail("ModelSpec: needs at least one conv block");
  if (num_classes < 2) fail("ModelSpec: needs at least two classes");
  int h = image_h, w = image_w;
  for (const ConvSpec& c : convs) {
    if (c.out_channels < 2) fail("ModelSpec: BN sites need >= 2 channels");
    if (c.kernel < 1 || c.stride < 1) fail("ModelSpec: bad kernel/stride");
    if (c.kernel > h || c.kernel > w) fail("ModelSpec: kernel larger than feature map");
    h = (h - c.kernel) / c.stride + 1;
    w = (w - c.kernel) / c.stride + 1;
  }
  if (h < 1 || w < 1) fail("ModelSpec: feature map vanishes");
}

Model::Model(ModelSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng = Rng::fork(seed, 0x6d6f64656cULL);

  int in_ch = spec_.in_channels;
  for (size_t i = 0; i < spec_.convs.size(); ++i) {
    const ConvSpec& c = spec_.convs[i];
    Tensor k({c.out_channels, in_ch, c.kernel, c.kernel});
    const double sd = std::sqrt(2.0 / (in_ch * c.kernel * c.kernel));
    for (int64_t j = 0; j < k.numel(); ++j) k[j] = static_cast<float>(sd * rng.normal());
    kernels_.push_back(std::move(k));

    BnSite site;
    site.state.mu_source = Tensor::zeros({c.out_channels});
    site.state.var_source = Tensor::full({c.out_channels}, 1.0f);
    site.state.gamma = Tensor::full({c.out_channels}, 1.0f);
    site.state.beta = Tensor::zeros({c.out_channels});
    site.running_mu = Tensor::zeros({c.out_channels});
    site.running_var = Tensor::full({c.out_channels}, 1.0f);
    sites_.push_back(std::move(site));
    in_ch = c.out_channels;
  }

  head_weight_ = Tensor({in_ch, spec_.num_classes});
  const double sd = std::sqrt(2.0 / in_ch);
  for (int64_t j = 0; j < head_weight_.numel(); ++j)
    head_weight_[j] = static_cast<float>(sd * rng.normal());
  head_bias_ = Tensor::zeros({spec_.num_classes});
}

void Model::set_strategy(const norm::StrategyParams& params) {
  for (BnSite& s : sites_) s.state.params = params;
}

void Model::init_unmix(uint64_t seed, int batch_size) {
  for (size_t i = 0; i < sites_.size(); ++i) {
    BnSite& s = sites_[i];
    s.unmix = norm::unmix_init(s.state, s.state.params.unmix_k, s.state.params.unmix_alpha_init,
                               seed + i);
    s.unmix->momentum = static_cast<float>(
        norm::momentum_rule(batch_size, s.state.params.b0, s.state.params.lambda0));
  }
}

std::map<std::string, Tensor*> Model::parameters() {
  std::map<std::string, Tensor*> out;
  for (size_t i = 0; i < kernels_.size(); ++i) {
    out["conv" + std::to_string(i) + ".kernel"] = &kernels_[i];
    out["bn" + std::to_string(i) + ".gamma"] = &sites_[i].state.gamma;
    out["bn" + std::to_string(i) + ".beta"] = &sites_[i].state.beta;
  }
  out["head.weight"] = &head_weight_;
  out["head.bias"] = &head_bias_;
  return out;
}

std::map<std::string, Tensor*> Model::bn_affine_parameters(int eligible_sites) {
  std::map<std::string, Tensor*> out;
  const int limit = eligible_sites < 0 ? num_bn_sites() : eligible_sites;
  for (int i = 0; i < std::min(limit, num_bn_sites()); ++i) {
    out["bn" + std::to_string(i) + ".gamma"] = &sites_[static_cast<size_t>(i)].state.gamma;
    out["bn" + std::to_string(i) + ".beta"] = &sites_[static_cast<size_t>(i)].state.beta;
  }
  return out;
}

void Model::freeze_source_stats() {
  for (BnSite& s : sites_) {
    s.state.mu_source = s.running_mu;
    s.state.var_source = s.running_var;
  }
}

Model::Forward Model::forward(const Tensor& images, const ForwardOptions& opts,
                              const GateFn& gate_fn) {
  if (images.rank() != 4) fail("Model::forward: images must be [N,C,H,W]");
  if (images.dim(1) != spec_.in_channels) fail("Model::forward: channel mismatch");

  Forward fw;
  autodiff::Graph& g = fw.graph;
  autodiff::ValueId v = g.leaf(images, "input", false);

  for (size_t i = 0; i < kernels_.size(); ++i) {
    const std::string idx = std::to_string(i);
    autodiff::ValueId k =
        g.leaf(kernels_[i], "conv" + idx + ".kernel", opts.trainable_backbone);
    v = g.conv2d(v, k, spec_.convs[i].stride);

    BnSite& site = sites_[i];
    const Tensor& feat = g.value(v);
    const norm::BatchStats stats = norm::compute_batch_stats(feat);
    if (i == 0) {
      fw.first_stats = stats;
      fw.gate = gate_fn ? gate_fn(feat, stats) : diversity::DiversityGate::forced(true);
    }

    const bool site_trainable =
        opts.trainable_bn_affine &&
        (opts.eligible_bn_sites < 0 || static_cast<int>(i) < opts.eligible_bn_sites);
    autodiff::ValueId gamma = g.leaf(site.state.gamma, "bn" + idx + ".gamma", site_trainable);
    autodiff::ValueId beta = g.leaf(site.state.beta, "bn" + idx + ".beta", site_trainable);

    Tensor mu, var;
    float eps = site.state.eps;
    if (opts.train_mode) {
      mu = stats.mu_test;
      var = stats.var_test;
      for (int64_t c = 0; c < mu.numel(); ++c) {
        site.running_mu[c] += kRunningMomentum * (mu[c] - site.running_mu[c]);
        site.running_var[c] += kRunningMomentum * (var[c] - site.running_var[c]);
      }
    } else {
      const norm::StrategyParams& p = site.state.params;
      switch (p.strategy) {
        case norm::Strategy::kSbn:
          mu = site.state.mu_source;
          var = site.state.var_source;
          break;
        case norm::Strategy::kTbn:
          mu = stats.mu_test;
          var = stats.var_test;
          break;
        case norm::Strategy::kAlphaBn: {
          auto [m, s] = norm::alpha_bn_stats(site.state, stats, p.alpha);
          mu = std::move(m);
          var = std::move(s);
          break;
        }
        case norm::Strategy::kIn:
          mu = stats.mu_instance;
          var = stats.var_instance;
          break;
        case norm::Strategy::kIabn: {
          auto [m, s] =
              norm::iabn_stats(site.state, stats, p.kappa, p.alpha, p.psi_mode, p.threshold_scale);
          mu = std::move(m);
          var = std::move(s);
          break;
        }
        case norm::Strategy::kDabn: {
          auto [m, s] = norm::dabn_stats(site.state, stats, fw.gate.is_high, p.alpha, p.kappa,
                                         p.psi_mode, p.threshold_scale);
          mu = std::move(m);
          var = std::move(s);
          break;
        }
        case norm::Strategy::kUnmix: {
          if (!site.unmix) fail("Model::forward: unmix strategy without init_unmix");
          auto [m, s] = norm::unmix_stats(feat, site.state, *site.unmix);
          mu = std::move(m);
          var = std::move(s);
          eps = 1e-6f;
          break;
        }
      }
    }
    v = g.channel_norm(v, gamma, beta, std::move(mu), std::move(var), eps);
    v = g.relu(v);
  }

  v = g.global_avg_pool(v);
  autodiff::ValueId w = g.leaf(head_weight_, "head.weight", opts.trainable_backbone);
  autodiff::ValueId b = g.leaf(head_bias_, "head.bias", opts.trainable_backbone);
  fw.logits = g.affine(v, w, b);
  return fw;
}

uint64_t Model::param_hash() const {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
    const size_t n = static_cast<size_t>(t.numel()) * sizeof(float);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Tensor& k : kernels_) feed(k);
  for (const BnSite& s : sites_) {
    feed(s.state.gamma);
    feed(s.state.beta);
    feed(s.state.mu_source);
    feed(s.state.var_source);
  }
  feed(head_weight_);
  feed(head_bias_);
  return h;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int64_t N = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(N));
  for (int64_t r = 0; r < N; ++r) {
    int best = 0;
    float bv = logits.at(r, 0);
    for (int64_t k = 1; k < K; ++k) {
      if (logits.at(r, k) > bv) {
        bv = logits.at(r, k);
        best = static_cast<int>(k);
      }
    }
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

}  // namespace datta::adapt
