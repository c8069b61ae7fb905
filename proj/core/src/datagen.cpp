#include "datta/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "datta/rng.hpp"

namespace datta::data {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr uint64_t kStreamUidBase = 1ULL << 40;  // keeps stream uids clear of training uids

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

}  // namespace

void SourceTask::validate() const {
  if (num_classes != 10) fail("SourceTask: the procedural recipe catalog has 10 classes");
  if (channels < 1 || height < 8 || width < 8) fail("SourceTask: image shape too small");
}

CorruptionKind corruption_from_string(const std::string& name) {
  if (name == "identity") return CorruptionKind::kIdentity;
  if (name == "gaussian_noise") return CorruptionKind::kGaussianNoise;
  if (name == "shot_noise") return CorruptionKind::kShotNoise;
  if (name == "impulse_noise") return CorruptionKind::kImpulseNoise;
  if (name == "defocus_blur") return CorruptionKind::kDefocusBlur;
  if (name == "motion_blur") return CorruptionKind::kMotionBlur;
  if (name == "contrast") return CorruptionKind::kContrast;
  if (name == "brightness") return CorruptionKind::kBrightness;
  if (name == "pixelate") return CorruptionKind::kPixelate;
  fail("unknown corruption kind '" + name + "'");
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kIdentity: return "identity";
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
    case CorruptionKind::kShotNoise: return "shot_noise";
    case CorruptionKind::kImpulseNoise: return "impulse_noise";
    case CorruptionKind::kDefocusBlur: return "defocus_blur";
    case CorruptionKind::kMotionBlur: return "motion_blur";
    case CorruptionKind::kContrast: return "contrast";
    case CorruptionKind::kBrightness: return "brightness";
    case CorruptionKind::kPixelate: return "pixelate";
  }
  return "?";
}

void Domain::validate() const {
  if (kind == CorruptionKind::kIdentity) {
    if (severity != 0) fail("Domain: identity only exists at severity 0");
  } else if (severity < 1 || severity > 5) {
    fail("Domain: severity must be in 1..5 for " + to_string(kind));
  }
}

std::string Domain::str() const { return to_string(kind) + ":" + std::to_string(severity); }

Domain Domain::parse(const std::string& text) {
  const auto pos = text.find(':');
  Domain d;
  if (pos == std::string::npos) {
    d.kind = corruption_from_string(text);
    d.severity = d.kind == CorruptionKind::kIdentity ? 0 : 5;
  } else {
    d.kind = corruption_from_string(text.substr(0, pos));
    d.severity = std::stoi(text.substr(pos + 1));
  }
  d.validate();
  return d;
}

ScenarioKind scenario_from_string(const std::string& name) {
  if (name == "dynamic") return ScenarioKind::kDynamic;
  if (name == "dynamic_s") return ScenarioKind::kDynamicS;
  if (name == "non_iid") return ScenarioKind::kNonIid;
  if (name == "multi_non_iid") return ScenarioKind::kMultiNonIid;
  fail("unknown scenario kind '" + name + "' (expected dynamic|dynamic_s|non_iid|multi_non_iid)");
}

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kDynamic: return "dynamic";
    case ScenarioKind::kDynamicS: return "dynamic_s";
    case ScenarioKind::kNonIid: return "non_iid";
    case ScenarioKind::kMultiNonIid: return "multi_non_iid";
  }
  return "?";
}

void ScenarioSpec::validate() const {
  if (domains.empty()) fail("ScenarioSpec: needs at least one domain");
  for (const Domain& d : domains) d.validate();
  if (batch_size < 1) fail("ScenarioSpec: batch_size must be >= 1");
  if (num_batches < 1) fail("ScenarioSpec: num_batches must be >= 1");
  if (static_cast<int>(domains.size()) > batch_size) {
    fail("ScenarioSpec: more domains than batch slots");
  }
  const bool mixes = kind == ScenarioKind::kDynamic || kind == ScenarioKind::kDynamicS ||
                     kind == ScenarioKind::kMultiNonIid;
  if (mixes && kind == ScenarioKind::kDynamic && domains.size() < 2) {
    fail("ScenarioSpec: dynamic requires >= 2 domains");
  }
  const bool non_iid = kind == ScenarioKind::kNonIid || kind == ScenarioKind::kMultiNonIid;
  if (non_iid && !(delta > 0.0)) fail("ScenarioSpec: delta must be > 0 for non-i.i.d. kinds");
  if (kind == ScenarioKind::kDynamicS && run_length < 1) {
    fail("ScenarioSpec: run_length must be >= 1");
  }
}

int sample_label(const SourceTask& task, uint64_t uid) {
  const auto k = static_cast<uint64_t>(task.num_classes);
  const uint64_t block = uid / k;
  std::vector<int> perm(task.num_classes);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng::fork(task.seed, block, 0x6c61626cULL);
  rng.shuffle(perm);
  return perm[static_cast<size_t>(uid % k)];
}

namespace {

// One grayscale pattern in [0,1] per class; per-sample jitter comes from rng.
// Stripe/checker/ring classes live at high spatial frequency so that pixel
// noise genuinely competes with the class signal.
struct PatternParams {
  double freq, phase, cx, cy, cell, ring, radius, width, angle;
};

double pattern_value(int class_id, int x, int y, int W, int H, const PatternParams& p,
                     const std::vector<float>& block_noise) {
  const double xf = x, yf = y;
  switch (class_id) {
    case 0:  // horizontal stripes
      return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * p.freq * yf / H + p.phase);
    case 1:  // vertical stripes
      return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * p.freq * xf / W + p.phase);
    case 2:  // diagonal stripes
      return 0.5 +
             0.5 * std::sin(2.0 * std::numbers::pi * p.freq * (xf + yf) / (W + H) + p.phase);
    case 3: {  // checkerboard
      const int cell = static_cast<int>(p.cell);
      return ((x / cell + y / cell) % 2 == 0) ? 1.0 : 0.0;
    }
    case 4: {  // concentric rings
      const double r = std::hypot(xf - p.cx, yf - p.cy);
      return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * r / p.ring + p.phase);
    }
    case 5: {  // filled disk
      const double r = std::hypot(xf - p.cx, yf - p.cy);
      return std::clamp((p.radius - r) / 1.5 + 0.5, 0.0, 1.0);
    }
    case 6: {  // plus sign
      const bool in_bar = std::abs(xf - p.cx) < p.width || std::abs(yf - p.cy) < p.width;
      return in_bar ? 1.0 : 0.0;
    }
    case 7: {  // linear gradient
      const double proj = (xf - W / 2.0) * std::cos(p.angle) + (yf - H / 2.0) * std::sin(p.angle);
      const double half = std::hypot(W / 2.0, H / 2.0);
      return std::clamp(0.5 + proj / (2.0 * half) * 1.6, 0.0, 1.0);
    }
    case 8: {  // blocky binary noise (2x2 blocks)
      const int bw = (W + 1) / 2;
      return block_noise[static_cast<size_t>((y / 2) * bw + (x / 2))];
    }
    case 9: {  // two anti-diagonal lines
      const double d = xf + yf - (W + H) / 2.0 + 1.0;
      const bool on_line = std::abs(d - p.radius) < p.width || std::abs(d + p.radius) < p.width;
      return on_line ? 1.0 : 0.0;
    }
    default:
      fail("pattern_value: class id out of range");
  }
}

}  // namespace

Tensor make_sample(const SourceTask& task, int class_id, uint64_t uid) {
  if (class_id < 0 || class_id >= task.num_classes) fail("make_sample: class id out of range");
  const int C = task.channels, H = task.height, W = task.width;
  Rng rng = Rng::fork(task.seed, uid, static_cast<uint64_t>(class_id) + 0x70617453ULL);

  PatternParams p;
  p.freq = 3.5 + rng.uniform() * 2.0;
  p.phase = rng.uniform() * 2.0 * std::numbers::pi;
  p.cx = W / 2.0 + rng.uniform(-4.0, 4.0);
  p.cy = H / 2.0 + rng.uniform(-4.0, 4.0);
  p.cell = 2.0 + std::floor(rng.uniform() * 2.0);  // 2..3
  p.ring = 3.5 + rng.uniform() * 2.0;
  p.radius = 6.0 + rng.uniform() * 4.0;
  p.width = 1.4 + rng.uniform() * 0.8;
  p.angle = rng.uniform() * 2.0 * std::numbers::pi;

  std::vector<float> block_noise;
  if (class_id == 8) {
    const int bw = (W + 1) / 2, bh = (H + 1) / 2;
    block_noise.resize(static_cast<size_t>(bw * bh));
    for (float& b : block_noise) b = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  }

  const double amp = 0.24 + rng.uniform() * 0.08;
  const double bg = 0.26 + rng.uniform() * 0.1;
  std::vector<double> gain(static_cast<size_t>(C));
  for (double& g : gain) g = 0.85 + rng.uniform() * 0.15;

  Tensor img({C, H, W});
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double v = bg + amp * pattern_value(class_id, x, y, W, H, p, block_noise);
      for (int c = 0; c < C; ++c) {
        const double noisy = v * gain[static_cast<size_t>(c)] + 0.04 * rng.normal();
        img[(static_cast<int64_t>(c) * H + y) * W + x] = clamp01(static_cast<float>(noisy));
      }
    }
  }
  return img;
}

LabeledBatch gen_source(const SourceTask& task, int64_t n, uint64_t first_uid) {
  if (n < 1) fail("gen_source: n must be >= 1");
  task.validate();
  LabeledBatch out;
  out.images = Tensor({n, task.channels, task.height, task.width});
  out.labels.resize(static_cast<size_t>(n));
  out.domain_ids.assign(static_cast<size_t>(n), -1);
  const int64_t per = static_cast<int64_t>(task.channels) * task.height * task.width;
  for (int64_t i = 0; i < n; ++i) {
    const uint64_t uid = first_uid + static_cast<uint64_t>(i);
    const int label = sample_label(task, uid);
    const Tensor img = make_sample(task, label, uid);
    std::copy(img.data().begin(), img.data().end(), out.images.data().begin() + i * per);
    out.labels[static_cast<size_t>(i)] = label;
  }
  return out;
}

namespace {

Tensor box_blur(const Tensor& x, int radius_h, int radius_w) {
  const int C = static_cast<int>(x.dim(0)), H = static_cast<int>(x.dim(1)),
            W = static_cast<int>(x.dim(2));
  Tensor tmp({C, H, W}), out({C, H, W});
  // horizontal pass, renormalized at the borders
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double acc = 0.0;
        int cnt = 0;
        for (int k = -radius_w; k <= radius_w; ++k) {
          const int xi = xx + k;
          if (xi < 0 || xi >= W) continue;
          acc += x[(static_cast<int64_t>(c) * H + y) * W + xi];
          ++cnt;
        }
        tmp[(static_cast<int64_t>(c) * H + y) * W + xx] = static_cast<float>(acc / cnt);
      }
  if (radius_h == 0) return tmp;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double acc = 0.0;
        int cnt = 0;
        for (int k = -radius_h; k <= radius_h; ++k) {
          const int yi = y + k;
          if (yi < 0 || yi >= H) continue;
          acc += tmp[(static_cast<int64_t>(c) * H + yi) * W + xx];
          ++cnt;
        }
        out[(static_cast<int64_t>(c) * H + y) * W + xx] = static_cast<float>(acc / cnt);
      }
  return out;
}

}  // namespace

Tensor apply_corruption(const Tensor& x, const Domain& d, uint64_t seed) {
  if (x.rank() != 3) fail("apply_corruption: expected [C,H,W], got " + x.shape_str());
  d.validate();
  if (d.kind == CorruptionKind::kIdentity) return x;

  const int s = d.severity - 1;
  const int C = static_cast<int>(x.dim(0)), H = static_cast<int>(x.dim(1)),
            W = static_cast<int>(x.dim(2));
  Rng rng = Rng::fork(seed, static_cast<uint64_t>(d.kind), static_cast<uint64_t>(d.severity));
  Tensor out = x;

  switch (d.kind) {
    case CorruptionKind::kGaussianNoise: {
      static constexpr double kSigma[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
      for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = clamp01(static_cast<float>(out[i] + kSigma[s] * rng.normal()));
      break;
    }
    case CorruptionKind::kShotNoise: {
      // Gaussian approximation of photon noise at a per-severity count budget.
      static constexpr double kCounts[5] = {60.0, 30.0, 15.0, 7.0, 3.0};
      for (int64_t i = 0; i < out.numel(); ++i) {
        const double sd = std::sqrt(std::max(0.0, static_cast<double>(out[i])) / kCounts[s]);
        out[i] = clamp01(static_cast<float>(out[i] + sd * rng.normal()));
      }
      break;
    }
    case CorruptionKind::kImpulseNoise: {
      static constexpr double kProb[5] = {0.03, 0.06, 0.10, 0.16, 0.25};
      for (int64_t i = 0; i < out.numel(); ++i) {
        if (rng.uniform() < kProb[s]) out[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
      }
      break;
    }
    case CorruptionKind::kDefocusBlur: {
      static constexpr int kRadius[5] = {1, 2, 3, 4, 5};
      out = box_blur(out, kRadius[s], kRadius[s]);
      break;
    }
    case CorruptionKind::kMotionBlur: {
      static constexpr int kRadius[5] = {1, 2, 3, 4, 5};  // horizontal extent 2r+1
      out = box_blur(out, 0, kRadius[s]);
      break;
    }
    case CorruptionKind::kContrast: {
      static constexpr double kScale[5] = {0.82, 0.70, 0.58, 0.47, 0.38};
      double mean = 0.0;
      for (int64_t i = 0; i < out.numel(); ++i) mean += out[i];
      mean /= static_cast<double>(out.numel());
      for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = clamp01(static_cast<float>((out[i] - mean) * kScale[s] + mean));
      break;
    }
    case CorruptionKind::kBrightness: {
      static constexpr double kShift[5] = {0.05, 0.10, 0.16, 0.23, 0.32};
      for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = clamp01(static_cast<float>(out[i] + kShift[s]));
      break;
    }
    case CorruptionKind::kPixelate: {
      static constexpr int kBlock[5] = {2, 3, 4, 6, 8};
      const int b = kBlock[s];
      for (int c = 0; c < C; ++c)
        for (int y0 = 0; y0 < H; y0 += b)
          for (int x0 = 0; x0 < W; x0 += b) {
            const int y1 = std::min(y0 + b, H), x1 = std::min(x0 + b, W);
            double acc = 0.0;
            for (int y = y0; y < y1; ++y)
              for (int xx = x0; xx < x1; ++xx)
                acc += x[(static_cast<int64_t>(c) * H + y) * W + xx];
            const auto v = static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
            for (int y = y0; y < y1; ++y)
              for (int xx = x0; xx < x1; ++xx)
                out[(static_cast<int64_t>(c) * H + y) * W + xx] = v;
          }
      break;
    }
    case CorruptionKind::kIdentity:
      break;
  }
  return out;
}

std::vector<std::vector<double>> dirichlet_schedule(int num_slots, int num_classes, double delta,
                                                    uint64_t seed) {
  if (!(delta > 0.0)) fail("dirichlet_schedule: delta must be > 0");
  if (num_slots < 1 || num_classes < 1) fail("dirichlet_schedule: empty schedule");
  std::vector<std::vector<double>> rows(static_cast<size_t>(num_slots));
  for (int r = 0; r < num_slots; ++r) {
    Rng rng = Rng::fork(seed, static_cast<uint64_t>(r), 0x64697269ULL);
    std::vector<double> g(static_cast<size_t>(num_classes));
    double sum = 0.0;
    for (double& v : g) {
      v = rng.gamma(delta);
      sum += v;
    }
    if (sum <= 0.0) {
      // all draws underflowed; fall back to a one-hot row
      std::fill(g.begin(), g.end(), 0.0);
      g[static_cast<size_t>(rng.below(static_cast<uint64_t>(num_classes)))] = 1.0;
      sum = 1.0;
    }
    for (double& v : g) v /= sum;
    rows[static_cast<size_t>(r)] = std::move(g);
  }
  return rows;
}

Stream::Stream(ScenarioSpec spec, SourceTask task) : spec_(std::move(spec)), task_(std::move(task)) {
  spec_.validate();
  task_.validate();
  if (spec_.kind == ScenarioKind::kNonIid || spec_.kind == ScenarioKind::kMultiNonIid) {
    label_schedule_ =
        dirichlet_schedule(spec_.num_batches, task_.num_classes, spec_.delta, spec_.seed);
  }
}

std::vector<int> Stream::domain_counts(int batch_index) const {
  const int M = static_cast<int>(spec_.domains.size());
  const int B = spec_.batch_size;
  std::vector<int> counts(static_cast<size_t>(M), 0);

  auto mixed = [&]() {
    const int base = B / M, rem = B % M;
    for (int m = 0; m < M; ++m) counts[static_cast<size_t>(m)] = base;
    for (int j = 0; j < rem; ++j)
      counts[static_cast<size_t>((batch_index + j) % M)] += 1;  // extras rotate per batch
  };

  switch (spec_.kind) {
    case ScenarioKind::kDynamic:
    case ScenarioKind::kMultiNonIid:
      mixed();
      break;
    case ScenarioKind::kDynamicS: {
      const int run = batch_index / spec_.run_length;
      if (run % 2 == 0) {
        counts[static_cast<size_t>((run / 2) % M)] = B;  // single-domain run
      } else {
        mixed();
      }
      break;
    }
    case ScenarioKind::kNonIid: {
      // one contiguous segment per domain, declaration order
      int seg = static_cast<int>(static_cast<int64_t>(batch_index) * M / spec_.num_batches);
      seg = std::min(seg, M - 1);
      counts[static_cast<size_t>(seg)] = B;
      break;
    }
  }
  return counts;
}

std::vector<int> Stream::label_counts(int batch_index) const {
  const int B = spec_.batch_size;
  const int K = task_.num_classes;
  const auto& row = label_schedule_[static_cast<size_t>(batch_index)];
  std::vector<int> counts(static_cast<size_t>(K), 0);
  std::vector<std::pair<double, int>> frac;
  int assigned = 0;
  for (int k = 0; k < K; ++k) {
    const double want = row[static_cast<size_t>(k)] * B;
    counts[static_cast<size_t>(k)] = static_cast<int>(std::floor(want));
    assigned += counts[static_cast<size_t>(k)];
    frac.emplace_back(want - std::floor(want), k);
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int j = 0; j < B - assigned; ++j) counts[static_cast<size_t>(frac[static_cast<size_t>(j)].second)] += 1;
  return counts;
}

LabeledBatch Stream::batch(int index) const {
  if (index < 0 || index >= spec_.num_batches) fail("Stream::batch: index out of range");
  const int B = spec_.batch_size;
  const int C = task_.channels, H = task_.height, W = task_.width;

  // domain per slot, contiguous by domain
  const std::vector<int> dcounts = domain_counts(index);
  std::vector<int> domain_of(static_cast<size_t>(B));
  {
    int slot = 0;
    for (size_t m = 0; m < dcounts.size(); ++m)
      for (int j = 0; j < dcounts[m]; ++j) domain_of[static_cast<size_t>(slot++)] = static_cast<int>(m);
  }

  // label per slot
  std::vector<int> label_of(static_cast<size_t>(B));
  const bool scheduled =
      spec_.kind == ScenarioKind::kNonIid || spec_.kind == ScenarioKind::kMultiNonIid;
  if (scheduled) {
    const std::vector<int> lcounts = label_counts(index);
    int slot = 0;
    for (int k = 0; k < task_.num_classes; ++k)
      for (int j = 0; j < lcounts[static_cast<size_t>(k)]; ++j) label_of[static_cast<size_t>(slot++)] = k;
    // decorrelate the label order from the domain order
    Rng shuffle_rng = Rng::fork(spec_.seed, static_cast<uint64_t>(index), 0x73687566ULL);
    shuffle_rng.shuffle(label_of);
  } else {
    for (int j = 0; j < B; ++j) {
      const uint64_t uid = kStreamUidBase + static_cast<uint64_t>(index) * B + j;
      label_of[static_cast<size_t>(j)] = sample_label(task_, uid);
    }
  }

  LabeledBatch out;
  out.images = Tensor({B, C, H, W});
  out.labels = label_of;
  out.domain_ids = domain_of;
  const int64_t per = static_cast<int64_t>(C) * H * W;
  for (int j = 0; j < B; ++j) {
    const uint64_t uid = kStreamUidBase + static_cast<uint64_t>(index) * B + j;
    Tensor img = make_sample(task_, label_of[static_cast<size_t>(j)], uid);
    const Domain& dom = spec_.domains[static_cast<size_t>(domain_of[static_cast<size_t>(j)])];
    if (dom.kind != CorruptionKind::kIdentity) {
      img = apply_corruption(img, dom, Rng::fork(spec_.seed, uid, 0x636f7272ULL).next());
    }
    std::copy(img.data().begin(), img.data().end(), out.images.data().begin() + j * per);
  }
  return out;
}

Stream build_stream(const ScenarioSpec& spec, const SourceTask& task) {
  return Stream(spec, task);
}

}  // namespace datta::data
