#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "datta/checkpoint.hpp"
#include "datta/harness.hpp"

using namespace datta;
namespace fs = std::filesystem;

namespace {

data::SourceTask tiny_task(uint64_t seed = 0) {
  data::SourceTask t;
  t.seed = seed;
  t.height = 16;
  t.width = 16;
  return t;
}

adapt::ModelSpec tiny_model_spec() {
  adapt::ModelSpec spec;
  spec.image_h = 16;
  spec.image_w = 16;
  spec.convs = {{8, 3, 2}, {12, 3, 2}};
  return spec;
}

harness::TrainOptions quick_train() {
  harness::TrainOptions opts;
  opts.n_train = 1024;
  opts.n_eval = 256;
  opts.lr = 0.3f;
  return opts;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("datta_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

data::ScenarioSpec mixed_scenario(uint64_t seed = 0, int batches = 24) {
  data::ScenarioSpec spec;
  spec.kind = data::ScenarioKind::kDynamic;
  spec.domains = {data::Domain{data::CorruptionKind::kGaussianNoise, 3},
                  data::Domain{data::CorruptionKind::kBrightness, 3}};
  spec.batch_size = 16;
  spec.num_batches = batches;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST(TrainSource, DeterministicPerSeedAndLearns) {
  const data::SourceTask task = tiny_task(3);
  adapt::Model a = harness::train_source(task, tiny_model_spec(), 24, 7, quick_train());
  adapt::Model b = harness::train_source(task, tiny_model_spec(), 24, 7, quick_train());
  EXPECT_EQ(a.param_hash(), b.param_hash());

  adapt::Model c = harness::train_source(task, tiny_model_spec(), 24, 8, quick_train());
  EXPECT_NE(a.param_hash(), c.param_hash());

  const double acc = harness::clean_accuracy(a, task, 256, 1024);
  EXPECT_GE(acc, 0.75);  // the desk-scale config reaches 0.9; this is the smoke config

  for (const auto& site : a.sites()) {
    for (int64_t i = 0; i < site.state.var_source.numel(); ++i) {
      EXPECT_GE(site.state.var_source[i], 0.0f);
    }
  }
}

TEST(TrainSource, DivergenceNamesEpoch) {
  try {
    (void)harness::train_source(tiny_task(1), tiny_model_spec(), 4, 1,
                                [] {
                                  harness::TrainOptions o;
                                  o.n_train = 128;
                                  o.lr = 1e30f;  // guaranteed blow-up
                                  return o;
                                }());
    FAIL() << "expected divergence";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripBitwise) {
  const data::SourceTask task = tiny_task(5);
  adapt::Model model = harness::train_source(task, tiny_model_spec(), 1, 2, quick_train());
  const fs::path dir = temp_dir("ckpt");
  const std::string path = (dir / "model.ckpt").string();
  harness::save_checkpoint(model, path);
  adapt::Model loaded = harness::load_checkpoint(path);
  EXPECT_EQ(model.param_hash(), loaded.param_hash());

  // identical forward outputs
  const data::LabeledBatch batch = data::gen_source(task, 8);
  model.set_strategy(norm::StrategyParams{});
  loaded.set_strategy(norm::StrategyParams{});
  auto fa = model.forward(batch.images, adapt::ForwardOptions{});
  auto fb = loaded.forward(batch.images, adapt::ForwardOptions{});
  const Tensor& la = fa.graph.value(fa.logits);
  const Tensor& lb = fb.graph.value(fb.logits);
  for (int64_t i = 0; i < la.numel(); ++i) EXPECT_EQ(la[i], lb[i]);

  // save twice: identical bytes
  const std::string path2 = (dir / "model2.ckpt").string();
  harness::save_checkpoint(model, path2);
  EXPECT_EQ(read_file(path), read_file(path2));
}

TEST(Checkpoint, RejectsBadFiles) {
  const fs::path dir = temp_dir("badckpt");
  const std::string bad = (dir / "bad.ckpt").string();
  std::ofstream(bad) << "NOT-A-CHECKPOINT\n";
  EXPECT_THROW(harness::load_checkpoint(bad), std::runtime_error);
  EXPECT_THROW(harness::load_checkpoint((dir / "missing.ckpt").string()), std::runtime_error);

  // truncated blob
  const data::SourceTask task = tiny_task(5);
  adapt::Model model(tiny_model_spec(), 1);
  const std::string full = (dir / "full.ckpt").string();
  harness::save_checkpoint(model, full);
  const std::string bytes = read_file(full);
  std::ofstream(dir / "trunc.ckpt", std::ios::binary)
      << bytes.substr(0, bytes.size() - 100);
  EXPECT_THROW(harness::load_checkpoint((dir / "trunc.ckpt").string()), std::runtime_error);
}

TEST(RunExperiment, SourceHasNoBackwardAndNoMutation) {
  const data::SourceTask task = tiny_task(2);
  adapt::Model model(tiny_model_spec(), 9);
  const uint64_t hash = model.param_hash();
  adapt::AdaptationConfig cfg;
  cfg.method = adapt::Method::kSource;
  const harness::ExperimentResult res =
      harness::run_experiment(model, task, mixed_scenario(), cfg);
  EXPECT_EQ(res.summary.backward_count, 0);
  EXPECT_EQ(model.param_hash(), hash);
  EXPECT_EQ(static_cast<int>(res.records.size()), mixed_scenario().num_batches);
  for (const auto& r : res.records) {
    EXPECT_FALSE(r.did_backward);
    EXPECT_EQ(r.elapsed_ms, 0.0);  // timing off by default
  }
}

TEST(RunExperiment, RerunProducesByteIdenticalCsv) {
  const data::SourceTask task = tiny_task(2);
  adapt::Model model(tiny_model_spec(), 9);
  adapt::AdaptationConfig cfg;
  cfg.method = adapt::Method::kDatta;
  cfg.t_init = 4;
  const fs::path dir = temp_dir("rerun");
  const harness::ExperimentResult a =
      harness::run_experiment(model, task, mixed_scenario(3), cfg);
  const harness::ExperimentResult b =
      harness::run_experiment(model, task, mixed_scenario(3), cfg);
  harness::write_records_csv(a.records, (dir / "a.csv").string());
  harness::write_records_csv(b.records, (dir / "b.csv").string());
  EXPECT_EQ(read_file((dir / "a.csv").string()), read_file((dir / "b.csv").string()));
  EXPECT_EQ(harness::summary_to_json(a.summary), harness::summary_to_json(b.summary));
}

TEST(RunExperiment, DattaBranchAccounting) {
  const data::SourceTask task = tiny_task(4);
  adapt::Model model = harness::train_source(task, tiny_model_spec(), 2, 3, quick_train());
  adapt::AdaptationConfig cfg;
  cfg.method = adapt::Method::kDatta;
  cfg.t_init = 4;
  const harness::ExperimentResult res =
      harness::run_experiment(model, task, mixed_scenario(1, 32), cfg);
  int low = 0, cold = 0, high = 0;
  for (const auto& r : res.records) {
    if (r.branch == "cold") ++cold;
    else if (r.branch == "low") ++low;
    else ++high;
    EXPECT_EQ(r.did_backward, r.branch == "low");
  }
  EXPECT_EQ(cold, 4);
  EXPECT_EQ(res.summary.backward_count, low);
  EXPECT_GT(low, 0);
  EXPECT_GT(high, 0);
}

TEST(WriteReport, CsvRoundTripAndEmptyCase) {
  const fs::path dir = temp_dir("report");
  // empty record list: header-only CSV
  harness::write_records_csv({}, (dir / "empty.csv").string());
  EXPECT_EQ(read_file((dir / "empty.csv").string()),
            "t,acc,score,threshold,branch,did_backward,elapsed_ms,domain_ids\n");
  EXPECT_TRUE(harness::read_records_csv((dir / "empty.csv").string()).empty());

  std::vector<harness::ExperimentRecord> records;
  harness::ExperimentRecord r;
  r.t = 0;
  r.acc = 0.8125;
  r.score = 0.012345678901234567;
  r.threshold = 0.01;
  r.branch = "low";
  r.did_backward = true;
  r.elapsed_ms = 0.0;
  r.domain_ids = {0, 1, 1, 0};
  records.push_back(r);
  r.t = 1;
  r.branch = "high";
  r.did_backward = false;
  r.domain_ids = {1, 1, 0, 0};
  records.push_back(r);

  const std::string path = (dir / "records.csv").string();
  harness::write_records_csv(records, path);
  const auto parsed = harness::read_records_csv(path);
  ASSERT_EQ(parsed.size(), records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(parsed[i].t, records[i].t);
    EXPECT_EQ(parsed[i].acc, records[i].acc);
    EXPECT_EQ(parsed[i].score, records[i].score);
    EXPECT_EQ(parsed[i].threshold, records[i].threshold);
    EXPECT_EQ(parsed[i].branch, records[i].branch);
    EXPECT_EQ(parsed[i].did_backward, records[i].did_backward);
    EXPECT_EQ(parsed[i].domain_ids, records[i].domain_ids);
  }
}

TEST(WriteReport, SvgOnlyWhenRequested) {
  const data::SourceTask task = tiny_task(2);
  adapt::Model model(tiny_model_spec(), 9);
  adapt::AdaptationConfig cfg;
  cfg.method = adapt::Method::kBnStats;
  const harness::ExperimentResult res =
      harness::run_experiment(model, task, mixed_scenario(0, 6), cfg);

  const fs::path with = temp_dir("plots_on");
  harness::write_report(res, with.string(), /*plots=*/true);
  EXPECT_TRUE(fs::exists(with / "records.csv"));
  EXPECT_TRUE(fs::exists(with / "summary.json"));
  EXPECT_TRUE(fs::exists(with / "score_timeline.svg"));

  const fs::path without = temp_dir("plots_off");
  harness::write_report(res, without.string(), /*plots=*/false);
  EXPECT_TRUE(fs::exists(without / "records.csv"));
  EXPECT_FALSE(fs::exists(without / "score_timeline.svg"));
}

TEST(RunExperiment, TimingFillsLatencyField) {
  const data::SourceTask task = tiny_task(2);
  adapt::Model model(tiny_model_spec(), 9);
  adapt::AdaptationConfig cfg;
  cfg.method = adapt::Method::kBnStats;
  const harness::ExperimentResult res =
      harness::run_experiment(model, task, mixed_scenario(0, 4), cfg, /*timing=*/true);
  for (const auto& r : res.records) EXPECT_GT(r.elapsed_ms, 0.0);
  EXPECT_GT(res.summary.mean_latency_ms, 0.0);
}
