#include "datta/autodiff.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace datta::autodiff {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace

ValueId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<ValueId>(nodes_.size() - 1);
}

const Graph::Node& Graph::node(ValueId id) const {
  return nodes_.at(static_cast<size_t>(id));
}

bool Graph::any_needs_grad(const std::vector<ValueId>& ids) const {
  for (ValueId id : ids) {
    if (node(id).needs_grad) return true;
  }
  return false;
}

const Tensor& Graph::value(ValueId id) const { return node(id).out; }

ValueId Graph::leaf(Tensor value, std::string name, bool trainable) {
  Node n;
  n.op = Op::kLeaf;
  n.out = std::move(value);
  n.name = std::move(name);
  n.trainable = trainable;
  n.needs_grad = trainable;
  return push(std::move(n));
}

ValueId Graph::conv2d(ValueId input, ValueId kernel, int stride) {
  const Tensor& x = value(input);
  const Tensor& k = value(kernel);
  require(x.rank() == 4, "conv2d: input must be 4-d, got " + x.shape_str());
  require(k.rank() == 4, "conv2d: kernel must be 4-d, got " + k.shape_str());
  require(stride >= 1, "conv2d: stride must be >= 1");
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != Cin || kh > H || kw > W) {
    std::ostringstream os;
    os << "conv2d: kernel " << k.shape_str() << " incompatible with input " << x.shape_str();
    fail(os.str());
  }
  const int64_t Ho = (H - kh) / stride + 1;
  const int64_t Wo = (W - kw) / stride + 1;

  Node n;
  n.op = Op::kConv2d;
  n.inputs = {input, kernel};
  n.stride = stride;
  n.needs_grad = any_needs_grad(n.inputs);
  n.out = Tensor({N, Cout, Ho, Wo});

  const float* xp = x.ptr();
  const float* kp = k.ptr();
  float* op = n.out.ptr();
  for (int64_t b = 0; b < N; ++b) {
    for (int64_t co = 0; co < Cout; ++co) {
      for (int64_t oh = 0; oh < Ho; ++oh) {
        float* orow = op + ((b * Cout + co) * Ho + oh) * Wo;
        for (int64_t ow = 0; ow < Wo; ++ow) orow[ow] = 0.0f;
        for (int64_t ci = 0; ci < Cin; ++ci) {
          for (int64_t ky = 0; ky < kh; ++ky) {
            const float* xrow = xp + ((b * Cin + ci) * H + oh * stride + ky) * W;
            const float* krow = kp + ((co * Cin + ci) * kh + ky) * kw;
            for (int64_t kx = 0; kx < kw; ++kx) {
              const float kv = krow[kx];
              for (int64_t ow = 0; ow < Wo; ++ow) {
                orow[ow] += kv * xrow[ow * stride + kx];
              }
            }
          }
        }
      }
    }
  }
  return push(std::move(n));
}

ValueId Graph::relu(ValueId x) {
  Node n;
  n.op = Op::kRelu;
  n.inputs = {x};
  n.needs_grad = any_needs_grad(n.inputs);
  const Tensor& in = value(x);
  n.out = Tensor(in.shape());
  for (int64_t i = 0; i < in.numel(); ++i) n.out[i] = in[i] > 0.0f ? in[i] : 0.0f;
  return push(std::move(n));
}

ValueId Graph::global_avg_pool(ValueId x) {
  const Tensor& in = value(x);
  require(in.rank() == 4, "global_avg_pool: input must be 4-d, got " + in.shape_str());
  const int64_t N = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  require(HW >= 1, "global_avg_pool: empty spatial extent");

  Node n;
  n.op = Op::kGap;
  n.inputs = {x};
  n.needs_grad = any_needs_grad(n.inputs);
  n.out = Tensor({N, C});
  const float* xp = in.ptr();
  for (int64_t b = 0; b < N; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const float* p = xp + (b * C + c) * HW;
      double acc = 0.0;
      for (int64_t i = 0; i < HW; ++i) acc += p[i];
      n.out.at(b, c) = static_cast<float>(acc / static_cast<double>(HW));
    }
  }
  return push(std::move(n));
}

ValueId Graph::affine(ValueId x, ValueId weight, ValueId bias) {
  const Tensor& in = value(x);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  require(in.rank() == 2 && w.rank() == 2 && b.rank() == 1, "affine: expected [N,D]x[D,K]+[K]");
  if (in.dim(1) != w.dim(0) || w.dim(1) != b.dim(0)) {
    std::ostringstream os;
    os << "affine: shape mismatch " << in.shape_str() << " x " << w.shape_str() << " + "
       << b.shape_str();
    fail(os.str());
  }
  const int64_t N = in.dim(0), D = in.dim(1), K = w.dim(1);

  Node n;
  n.op = Op::kAffine;
  n.inputs = {x, weight, bias};
  n.needs_grad = any_needs_grad(n.inputs);
  n.out = Tensor({N, K});
  for (int64_t r = 0; r < N; ++r) {
    for (int64_t k = 0; k < K; ++k) n.out.at(r, k) = b[k];
    for (int64_t d = 0; d < D; ++d) {
      const float xv = in.at(r, d);
      const float* wrow = w.ptr() + d * K;
      float* orow = n.out.ptr() + r * K;
      for (int64_t k = 0; k < K; ++k) orow[k] += xv * wrow[k];
    }
  }
  return push(std::move(n));
}

ValueId Graph::channel_norm(ValueId x, ValueId gamma, ValueId beta, Tensor mu, Tensor var,
                            float eps) {
  const Tensor& in = value(x);
  require(in.rank() == 4, "channel_norm: input must be 4-d, got " + in.shape_str());
  const int64_t N = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  const Tensor& g = value(gamma);
  const Tensor& bt = value(beta);
  require(g.numel() == C && bt.numel() == C, "channel_norm: gamma/beta must have length C");
  const bool per_sample = mu.rank() == 2;
  if (per_sample) {
    require(mu.dim(0) == N && mu.dim(1) == C && var.same_shape(mu),
            "channel_norm: per-sample stats must be [N,C]");
  } else {
    require(mu.numel() == C && var.numel() == C, "channel_norm: stats must have length C");
  }

  Node n;
  n.op = Op::kChannelNorm;
  n.inputs = {x, gamma, beta};
  n.needs_grad = any_needs_grad(n.inputs);
  n.eps = eps;
  n.mu = std::move(mu);
  n.var = std::move(var);
  n.out = Tensor(in.shape());
  const float* xp = in.ptr();
  float* op = n.out.ptr();
  for (int64_t b = 0; b < N; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const int64_t si = per_sample ? b * C + c : c;
      const float m = n.mu[si];
      const float inv = 1.0f / std::sqrt(n.var[si] + eps);
      const float gm = g[c], bv = bt[c];
      const float* src = xp + (b * C + c) * HW;
      float* dst = op + (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) dst[i] = gm * (src[i] - m) * inv + bv;
    }
  }
  return push(std::move(n));
}

ValueId Graph::softmax_entropy(ValueId logits) {
  const Tensor& in = value(logits);
  require(in.rank() == 2, "softmax_entropy: logits must be [N,K]");
  const int64_t N = in.dim(0), K = in.dim(1);
  require(K >= 2, "softmax_entropy: needs K >= 2 classes");

  Node n;
  n.op = Op::kSoftmaxEntropy;
  n.inputs = {logits};
  n.needs_grad = any_needs_grad(n.inputs);
  n.probs = Tensor({N, K});
  double total = 0.0;
  for (int64_t r = 0; r < N; ++r) {
    const float* row = in.ptr() + r * K;
    float mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
    double ent = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      double p = std::exp(static_cast<double>(row[k] - mx)) / z;
      n.probs.at(r, k) = static_cast<float>(p);
      if (p > 0.0) ent -= p * std::log(p);
    }
    total += ent;
  }
  n.out = Tensor({}, {static_cast<float>(total / static_cast<double>(N))});
  return push(std::move(n));
}

ValueId Graph::softmax_cross_entropy(ValueId logits, std::vector<int> labels) {
  const Tensor& in = value(logits);
  require(in.rank() == 2, "softmax_cross_entropy: logits must be [N,K]");
  const int64_t N = in.dim(0), K = in.dim(1);
  require(static_cast<int64_t>(labels.size()) == N,
          "softmax_cross_entropy: one label per row required");

  Node n;
  n.op = Op::kSoftmaxCrossEntropy;
  n.inputs = {logits};
  n.needs_grad = any_needs_grad(n.inputs);
  n.labels = std::move(labels);
  n.probs = Tensor({N, K});
  double total = 0.0;
  for (int64_t r = 0; r < N; ++r) {
    const int y = n.labels[static_cast<size_t>(r)];
    require(y >= 0 && y < K, "softmax_cross_entropy: label out of range");
    const float* row = in.ptr() + r * K;
    float mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k] - mx));
    for (int64_t k = 0; k < K; ++k)
      n.probs.at(r, k) = static_cast<float>(std::exp(static_cast<double>(row[k] - mx)) / z);
    total -= static_cast<double>(row[y] - mx) - std::log(z);
  }
  n.out = Tensor({}, {static_cast<float>(total / static_cast<double>(N))});
  return push(std::move(n));
}

ValueId Graph::sum(ValueId x) {
  Node n;
  n.op = Op::kSum;
  n.inputs = {x};
  n.needs_grad = any_needs_grad(n.inputs);
  const Tensor& in = value(x);
  double acc = 0.0;
  for (int64_t i = 0; i < in.numel(); ++i) acc += in[i];
  n.out = Tensor({}, {static_cast<float>(acc)});
  return push(std::move(n));
}

ValueId Graph::scale(ValueId x, float factor) {
  Node n;
  n.op = Op::kScale;
  n.inputs = {x};
  n.factor = factor;
  n.needs_grad = any_needs_grad(n.inputs);
  const Tensor& in = value(x);
  n.out = Tensor(in.shape());
  for (int64_t i = 0; i < in.numel(); ++i) n.out[i] = factor * in[i];
  return push(std::move(n));
}

GradMap Graph::backward(ValueId loss) {
  const Node& ln = node(loss);
  if (ln.out.numel() != 1 || !ln.out.shape().empty()) {
    fail("backward: loss must be a scalar node, got shape " + ln.out.shape_str());
  }

  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> has_grad(nodes_.size(), false);
  grads[static_cast<size_t>(loss)] = Tensor({}, {1.0f});
  has_grad[static_cast<size_t>(loss)] = true;

  auto accum = [&](ValueId id, int64_t index, float v) {
    const size_t s = static_cast<size_t>(id);
    if (!has_grad[s]) {
      grads[s] = Tensor::zeros(node(id).out.shape());
      has_grad[s] = true;
    }
    grads[s][index] += v;
  };
  auto ensure = [&](ValueId id) -> Tensor& {
    const size_t s = static_cast<size_t>(id);
    if (!has_grad[s]) {
      grads[s] = Tensor::zeros(node(id).out.shape());
      has_grad[s] = true;
    }
    return grads[s];
  };

  // Single reverse sweep over the tape; execution order is topological order.
  for (ValueId id = loss; id >= 0; --id) {
    const size_t s = static_cast<size_t>(id);
    if (!has_grad[s]) continue;
    const Node& n = nodes_[s];
    if (!n.needs_grad && n.op != Op::kLeaf) continue;
    const Tensor& gout = grads[s];

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kConv2d: {
        const Node& xin = node(n.inputs[0]);
        const Node& kin = node(n.inputs[1]);
        const Tensor& x = xin.out;
        const Tensor& k = kin.out;
        const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
        const int64_t Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
        const int64_t Ho = n.out.dim(2), Wo = n.out.dim(3);
        const int st = n.stride;
        if (xin.needs_grad) {
          Tensor& gx = ensure(n.inputs[0]);
          for (int64_t b = 0; b < N; ++b)
            for (int64_t co = 0; co < Cout; ++co)
              for (int64_t oh = 0; oh < Ho; ++oh) {
                const float* grow = gout.ptr() + ((b * Cout + co) * Ho + oh) * Wo;
                for (int64_t ci = 0; ci < Cin; ++ci)
                  for (int64_t ky = 0; ky < kh; ++ky) {
                    float* xrow = gx.ptr() + ((b * Cin + ci) * H + oh * st + ky) * W;
                    const float* krow = k.ptr() + ((co * Cin + ci) * kh + ky) * kw;
                    for (int64_t kx = 0; kx < kw; ++kx)
                      for (int64_t ow = 0; ow < Wo; ++ow)
                        xrow[ow * st + kx] += krow[kx] * grow[ow];
                  }
              }
        }
        if (kin.needs_grad) {
          Tensor& gk = ensure(n.inputs[1]);
          for (int64_t b = 0; b < N; ++b)
            for (int64_t co = 0; co < Cout; ++co)
              for (int64_t oh = 0; oh < Ho; ++oh) {
                const float* grow = gout.ptr() + ((b * Cout + co) * Ho + oh) * Wo;
                for (int64_t ci = 0; ci < Cin; ++ci)
                  for (int64_t ky = 0; ky < kh; ++ky) {
                    const float* xrow = x.ptr() + ((b * Cin + ci) * H + oh * st + ky) * W;
                    float* krow = gk.ptr() + ((co * Cin + ci) * kh + ky) * kw;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                      float acc = 0.0f;
                      for (int64_t ow = 0; ow < Wo; ++ow) acc += xrow[ow * st + kx] * grow[ow];
                      krow[kx] += acc;
                    }
                  }
              }
        }
        break;
      }
      case Op::kRelu: {
        if (!node(n.inputs[0]).needs_grad) break;
        const Tensor& x = node(n.inputs[0]).out;
        Tensor& gx = ensure(n.inputs[0]);
        for (int64_t i = 0; i < x.numel(); ++i)
          if (x[i] > 0.0f) gx[i] += gout[i];
        break;
      }
      case Op::kGap: {
        if (!node(n.inputs[0]).needs_grad) break;
        const Tensor& x = node(n.inputs[0]).out;
        const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        Tensor& gx = ensure(n.inputs[0]);
        const float scale = 1.0f / static_cast<float>(HW);
        for (int64_t b = 0; b < N; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const float g = gout.at(b, c) * scale;
            float* dst = gx.ptr() + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) dst[i] += g;
          }
        break;
      }
      case Op::kAffine: {
        const Node& xin = node(n.inputs[0]);
        const Node& win = node(n.inputs[1]);
        const Node& bin = node(n.inputs[2]);
        const Tensor& x = xin.out;
        const Tensor& w = win.out;
        const int64_t N = x.dim(0), D = x.dim(1), K = w.dim(1);
        if (xin.needs_grad) {
          Tensor& gx = ensure(n.inputs[0]);
          for (int64_t r = 0; r < N; ++r)
            for (int64_t d = 0; d < D; ++d) {
              const float* wrow = w.ptr() + d * K;
              const float* grow = gout.ptr() + r * K;
              float acc = 0.0f;
              for (int64_t k = 0; k < K; ++k) acc += wrow[k] * grow[k];
              gx.at(r, d) += acc;
            }
        }
        if (win.needs_grad) {
          Tensor& gw = ensure(n.inputs[1]);
          for (int64_t r = 0; r < N; ++r)
            for (int64_t d = 0; d < D; ++d) {
              const float xv = x.at(r, d);
              const float* grow = gout.ptr() + r * K;
              float* wrow = gw.ptr() + d * K;
              for (int64_t k = 0; k < K; ++k) wrow[k] += xv * grow[k];
            }
        }
        if (bin.needs_grad) {
          Tensor& gb = ensure(n.inputs[2]);
          for (int64_t r = 0; r < N; ++r)
            for (int64_t k = 0; k < K; ++k) gb[k] += gout.at(r, k);
        }
        break;
      }
      case Op::kChannelNorm: {
        const Node& xin = node(n.inputs[0]);
        const Node& gin = node(n.inputs[1]);
        const Node& bin = node(n.inputs[2]);
        const Tensor& x = xin.out;
        const Tensor& g = gin.out;
        const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
        const bool per_sample = n.mu.rank() == 2;
        for (int64_t b = 0; b < N; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t si = per_sample ? b * C + c : c;
            const float m = n.mu[si];
            const float inv = 1.0f / std::sqrt(n.var[si] + n.eps);
            const float* src = x.ptr() + (b * C + c) * HW;
            const float* go = gout.ptr() + (b * C + c) * HW;
            if (xin.needs_grad) {
              const float gscale = g[c] * inv;
              float* gx = ensure(n.inputs[0]).ptr() + (b * C + c) * HW;
              for (int64_t i = 0; i < HW; ++i) gx[i] += gscale * go[i];
            }
            if (gin.needs_grad) {
              float acc = 0.0f;
              for (int64_t i = 0; i < HW; ++i) acc += go[i] * (src[i] - m) * inv;
              ensure(n.inputs[1])[c] += acc;
            }
            if (bin.needs_grad) {
              float acc = 0.0f;
              for (int64_t i = 0; i < HW; ++i) acc += go[i];
              ensure(n.inputs[2])[c] += acc;
            }
          }
        break;
      }
      case Op::kSoftmaxEntropy: {
        if (!node(n.inputs[0]).needs_grad) break;
        const int64_t N = n.probs.dim(0), K = n.probs.dim(1);
        Tensor& gx = ensure(n.inputs[0]);
        const float gscalar = gout[0] / static_cast<float>(N);
        for (int64_t r = 0; r < N; ++r) {
          double ent = 0.0;
          for (int64_t k = 0; k < K; ++k) {
            const double p = n.probs.at(r, k);
            if (p > 0.0) ent -= p * std::log(p);
          }
          for (int64_t k = 0; k < K; ++k) {
            const double p = n.probs.at(r, k);
            const double lp = p > 0.0 ? std::log(p) : 0.0;
            gx.at(r, k) += gscalar * static_cast<float>(-p * (lp + ent));
          }
        }
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        if (!node(n.inputs[0]).needs_grad) break;
        const int64_t N = n.probs.dim(0), K = n.probs.dim(1);
        Tensor& gx = ensure(n.inputs[0]);
        const float gscalar = gout[0] / static_cast<float>(N);
        for (int64_t r = 0; r < N; ++r)
          for (int64_t k = 0; k < K; ++k) {
            const float onehot = n.labels[static_cast<size_t>(r)] == k ? 1.0f : 0.0f;
            gx.at(r, k) += gscalar * (n.probs.at(r, k) - onehot);
          }
        break;
      }
      case Op::kSum: {
        if (!node(n.inputs[0]).needs_grad) break;
        Tensor& gx = ensure(n.inputs[0]);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gout[0];
        break;
      }
      case Op::kScale: {
        if (!node(n.inputs[0]).needs_grad) break;
        Tensor& gx = ensure(n.inputs[0]);
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += n.factor * gout[i];
        break;
      }
    }
  }

  GradMap out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op == Op::kLeaf && n.trainable) {
      if (has_grad[i]) {
        out[n.name] = std::move(grads[i]);
      } else {
        out[n.name] = Tensor::zeros(n.out.shape());
      }
    }
  }
  return out;
}

void sgd_update(std::map<std::string, Tensor*>& params, const GradMap& grads, float lr) {
  if (!(lr > 0.0f)) fail("sgd_update: learning rate must be positive");
  for (auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) fail("sgd_update: no gradient for parameter '" + name + "'");
    check_same_shape(*p, it->second, "sgd_update");
    for (int64_t i = 0; i < p->numel(); ++i) (*p)[i] -= lr * it->second[i];
  }
}

}  // namespace datta::autodiff
