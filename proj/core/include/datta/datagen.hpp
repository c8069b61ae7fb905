#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datta/tensor.hpp"

namespace datta::data {

/// Procedural 10-class image task standing in for the corruption benchmarks.
/// Every sample is a pure function of (seed, class, uid).
struct SourceTask {
  int num_classes = 10;
  int channels = 3;
  int height = 32;
  int width = 32;
  uint64_t seed = 0;

  void validate() const;
};

enum class CorruptionKind {
  kIdentity,
  kGaussianNoise,
  kShotNoise,
  kImpulseNoise,
  kDefocusBlur,
  kMotionBlur,
  kContrast,
  kBrightness,
  kPixelate,
};

CorruptionKind corruption_from_string(const std::string& name);
std::string to_string(CorruptionKind kind);

/// One test-time distribution: a corruption at a severity. identity carries
/// severity 0; every other kind uses 1..5.
struct Domain {
  CorruptionKind kind = CorruptionKind::kIdentity;
  int severity = 0;

  void validate() const;
  std::string str() const;  // e.g. "gaussian_noise:3"
  static Domain parse(const std::string& text);
};

enum class ScenarioKind { kDynamic, kDynamicS, kNonIid, kMultiNonIid };

ScenarioKind scenario_from_string(const std::string& name);
std::string to_string(ScenarioKind kind);

/// Declarative description of a test stream.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kDynamic;
  std::vector<Domain> domains;
  int batch_size = 64;
  int num_batches = 100;
  double delta = 1.0;    // Dirichlet concentration for the non-i.i.d. kinds
  uint64_t seed = 0;
  int run_length = 10;   // dynamic_s segment length in batches

  void validate() const;
};

struct LabeledBatch {
  Tensor images;                // [N,C,H,W], values in [0,1]
  std::vector<int> labels;      // N
  std::vector<int> domain_ids;  // N, index into ScenarioSpec::domains (-1 for clean data)
};

/// Class label for a sample uid: balanced within every aligned block of
/// num_classes uids, shuffled per block.
int sample_label(const SourceTask& task, uint64_t uid);

/// Renders one clean sample of the given class.
Tensor make_sample(const SourceTask& task, int class_id, uint64_t uid);

/// Clean samples for uids [first_uid, first_uid + n).
LabeledBatch gen_source(const SourceTask& task, int64_t n, uint64_t first_uid = 0);

/// Applies the domain's corruption to one [C,H,W] image. Deterministic per
/// seed, output clamped to [0,1]. identity returns the input bit-exactly.
Tensor apply_corruption(const Tensor& x, const Domain& d, uint64_t seed);

/// Rows of i.i.d. Dirichlet(delta * 1) class proportions, one per slot.
/// Each row sums to 1 within 1e-9.
std::vector<std::vector<double>> dirichlet_schedule(int num_slots, int num_classes, double delta,
                                                    uint64_t seed);

/// Deterministic lazy view of a test stream; batch(i) depends only on
/// (spec, task, i).
class Stream {
 public:
  Stream(ScenarioSpec spec, SourceTask task);

  int size() const { return spec_.num_batches; }
  const ScenarioSpec& spec() const { return spec_; }
  LabeledBatch batch(int index) const;

 private:
  std::vector<int> domain_counts(int batch_index) const;
  std::vector<int> label_counts(int batch_index) const;

  ScenarioSpec spec_;
  SourceTask task_;
  std::vector<std::vector<double>> label_schedule_;  // non-i.i.d. kinds only
};

Stream build_stream(const ScenarioSpec& spec, const SourceTask& task);

}  // namespace datta::data
