#pragma once

#include <deque>
#include <map>
#include <string>
#include <vector>

#include "datta/tensor.hpp"

namespace datta::autodiff {

using ValueId = int32_t;

/// Gradients keyed by the trainable leaf's registered name.
using GradMap = std::map<std::string, Tensor>;

/// Execution tape. Operations append nodes in forward order; backward walks
/// the tape once in reverse. Values are immutable once produced. One graph
/// per thread; two graphs never share state.
class Graph {
 public:
  /// Registers a leaf tensor. Trainable leaves receive gradients in
  /// backward(); detached leaves are absent from the gradient map.
  ValueId leaf(Tensor value, std::string name = "", bool trainable = false);

  /// Valid (no padding) cross-correlation.
  /// input [N,Cin,H,W] * kernel [Cout,Cin,kh,kw] -> [N,Cout,H',W'] with
  /// H' = (H-kh)/stride + 1.
  ValueId conv2d(ValueId input, ValueId kernel, int stride);

  /// Elementwise max(0,x); subgradient at 0 is 0.
  ValueId relu(ValueId x);

  /// [N,C,H,W] -> [N,C], mean over spatial positions.
  ValueId global_avg_pool(ValueId x);

  /// x[N,D] * weight[D,K] + bias[K] -> [N,K].
  ValueId affine(ValueId x, ValueId weight, ValueId bias);

  /// gamma * (x - mu) / sqrt(var + eps) + beta over [N,C,H,W].
  /// mu/var have shape [C] (shared) or [N,C] (per sample) and are constants
  /// for the backward pass; gradients flow to x, gamma, beta only.
  ValueId channel_norm(ValueId x, ValueId gamma, ValueId beta, Tensor mu, Tensor var,
                       float eps);

  /// Mean Shannon entropy of rowwise softmax, max-stabilized. Scalar output.
  ValueId softmax_entropy(ValueId logits);

  /// Mean negative log-likelihood of the given labels. Scalar output.
  ValueId softmax_cross_entropy(ValueId logits, std::vector<int> labels);

  ValueId sum(ValueId x);
  ValueId scale(ValueId x, float factor);

  const Tensor& value(ValueId id) const;
  size_t size() const { return nodes_.size(); }

  /// Reverse pass from a scalar loss. Returns gradients for every trainable
  /// leaf (zero tensors for trainable leaves the loss does not reach).
  /// Throws std::invalid_argument if the loss node is not scalar.
  GradMap backward(ValueId loss);

 private:
  enum class Op {
    kLeaf,
    kConv2d,
    kRelu,
    kGap,
    kAffine,
    kChannelNorm,
    kSoftmaxEntropy,
    kSoftmaxCrossEntropy,
    kSum,
    kScale,
  };

  struct Node {
    Op op;
    std::vector<ValueId> inputs;
    Tensor out;
    bool needs_grad = false;
    // leaf
    std::string name;
    bool trainable = false;
    // op-specific
    int stride = 1;
    float factor = 1.0f;
    float eps = 0.0f;
    Tensor mu, var;            // channel_norm constants
    Tensor probs;              // cached softmax
    std::vector<int> labels;   // cross entropy
  };

  ValueId push(Node node);
  const Node& node(ValueId id) const;
  bool any_needs_grad(const std::vector<ValueId>& ids) const;

  // deque: Tensor references returned by value() stay valid across pushes
  std::deque<Node> nodes_;
};

/// p <- p - lr * g for every named parameter. Throws std::invalid_argument
/// if a parameter has no gradient entry.
void sgd_update(std::map<std::string, Tensor*>& params, const GradMap& grads, float lr);

}  // namespace datta::autodiff
