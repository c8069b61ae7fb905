#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "datta/adaptation.hpp"
#include "datta/datagen.hpp"
#include "datta/model.hpp"

namespace datta::harness {

struct TrainOptions {
  int64_t n_train = 3072;
  int64_t n_eval = 1024;
  int batch_size = 64;
  float lr = 0.3f;
};

/// Trains the classifier on the synthetic task with plain SGD and batch
/// statistics; BN running averages are frozen into the source statistics at
/// the end. Deterministic per seed. Throws std::runtime_error naming the
/// epoch if the loss diverges.
adapt::Model train_source(const data::SourceTask& task, const adapt::ModelSpec& model_spec,
                          int epochs, uint64_t seed, const TrainOptions& opts = {});

/// Held-out accuracy with frozen source statistics (uids beyond the
/// training range).
double clean_accuracy(adapt::Model& model, const data::SourceTask& task, int64_t n,
                      uint64_t first_uid, int batch_size = 64);

/// One CSV row per test batch.
struct ExperimentRecord {
  int t = 0;
  double acc = 0.0;
  double score = 0.0;
  double threshold = 0.0;
  std::string branch;  // high | low | cold
  bool did_backward = false;
  double elapsed_ms = 0.0;
  std::vector<int> domain_ids;
};

struct ExperimentSummary {
  std::string method;
  std::string scenario;
  uint64_t seed = 0;
  int num_batches = 0;
  double mean_acc = 0.0;
  double mean_score = 0.0;
  double mean_latency_ms = 0.0;
  int backward_count = 0;
  std::map<std::string, double> per_domain_acc;
};

struct ExperimentResult {
  std::vector<ExperimentRecord> records;
  ExperimentSummary summary;
};

/// Replays the stream through one adaptation session. With timing disabled
/// (the default) elapsed_ms is recorded as 0 so that every output byte is a
/// pure function of (model, spec, cfg).
ExperimentResult run_experiment(const adapt::Model& source_model, const data::SourceTask& task,
                                const data::ScenarioSpec& spec,
                                const adapt::AdaptationConfig& cfg, bool timing = false);

/// CSV with exactly the record columns in declared order:
/// t,acc,score,threshold,branch,did_backward,elapsed_ms,domain_ids
void write_records_csv(const std::vector<ExperimentRecord>& records, const std::string& path);
std::vector<ExperimentRecord> read_records_csv(const std::string& path);

std::string summary_to_json(const ExperimentSummary& summary);
void write_summary_json(const ExperimentSummary& summary, const std::string& path);

/// Score/threshold timeline as a small standalone SVG.
void write_score_svg(const std::vector<ExperimentRecord>& records, const std::string& path);

/// CSV + JSON summary (+ SVG unless plots is false) under out_dir.
void write_report(const ExperimentResult& result, const std::string& out_dir, bool plots = true);

}  // namespace datta::harness
