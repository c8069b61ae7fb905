#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "datta/autodiff.hpp"
#include "datta/diversity.hpp"
#include "datta/normalizers.hpp"
#include "datta/tensor.hpp"

namespace datta::adapt {

struct ConvSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
};

/// Conv/BN/ReLU blocks followed by global average pooling and a linear head.
/// All convolutions are valid (unpadded).
struct ModelSpec {
  int in_channels = 3;
  int image_h = 32;
  int image_w = 32;
  int num_classes = 10;
  std::vector<ConvSpec> convs = {{12, 5, 2}, {24, 3, 2}, {48, 3, 1}};

  void validate() const;
};

struct ForwardOptions {
  bool train_mode = false;          // normalize with batch stats, update running stats
  bool trainable_backbone = false;  // conv kernels and classifier head
  bool trainable_bn_affine = false;
  int eligible_bn_sites = -1;       // first k sites get trainable gamma/beta; -1 = all
};

/// Invoked once per forward at the first BN site with the raw features and
/// their batch statistics; the returned gate drives every DABN site.
using GateFn =
    std::function<diversity::DiversityGate(const Tensor&, const norm::BatchStats&)>;

class Model {
 public:
  struct BnSite {
    norm::BNLayerState state;
    Tensor running_mu;   // training-time EMA, frozen into state at the end
    Tensor running_var;
    std::optional<norm::UnMixState> unmix;
  };

  struct Forward {
    autodiff::Graph graph;
    autodiff::ValueId logits = -1;
    norm::BatchStats first_stats;
    diversity::DiversityGate gate;
  };

  Model() = default;
  Model(ModelSpec spec, uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  int num_bn_sites() const { return static_cast<int>(sites_.size()); }
  std::vector<BnSite>& sites() { return sites_; }
  const std::vector<BnSite>& sites() const { return sites_; }
  std::vector<Tensor>& conv_kernels() { return kernels_; }
  const std::vector<Tensor>& conv_kernels() const { return kernels_; }
  Tensor& head_weight() { return head_weight_; }
  Tensor& head_bias() { return head_bias_; }
  const Tensor& head_weight() const { return head_weight_; }
  const Tensor& head_bias() const { return head_bias_; }

  /// Applies one strategy configuration to every BN site.
  void set_strategy(const norm::StrategyParams& params);

  /// Creates the per-site K-component states for the unmix strategy.
  void init_unmix(uint64_t seed, int batch_size);

  /// All named parameters (conv kernels, gamma/beta, head).
  std::map<std::string, Tensor*> parameters();

  /// gamma/beta of the first `eligible_sites` BN sites (-1 = all).
  std::map<std::string, Tensor*> bn_affine_parameters(int eligible_sites = -1);

  /// Copies the training running averages into the frozen source statistics.
  void freeze_source_stats();

  Forward forward(const Tensor& images, const ForwardOptions& opts,
                  const GateFn& gate_fn = nullptr);

  /// FNV-1a over every parameter byte; detects any mutation.
  uint64_t param_hash() const;

 private:
  ModelSpec spec_;
  std::vector<Tensor> kernels_;
  std::vector<BnSite> sites_;
  Tensor head_weight_;
  Tensor head_bias_;
};

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace datta::adapt
