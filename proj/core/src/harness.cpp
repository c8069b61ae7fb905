#include "datta/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "datta/rng.hpp"
#include "json.hpp"

namespace datta::harness {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Shortest representation that round-trips the double exactly.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) fail("csv: bad number '" + s + "'");
  return v;
}

}  // namespace

adapt::Model train_source(const data::SourceTask& task, const adapt::ModelSpec& model_spec,
                          int epochs, uint64_t seed, const TrainOptions& opts) {
  if (epochs < 1) fail("train_source: epochs must be >= 1");
  if (opts.batch_size < 2) fail("train_source: batch size must be >= 2");

  const data::LabeledBatch train = data::gen_source(task, opts.n_train, 0);
  adapt::Model model(model_spec, seed);

  const int64_t C = task.channels, H = task.height, W = task.width;
  const int64_t per = C * H * W;
  std::vector<int64_t> order(static_cast<size_t>(opts.n_train));
  std::iota(order.begin(), order.end(), 0);

  adapt::ForwardOptions fopts;
  fopts.train_mode = true;
  fopts.trainable_backbone = true;
  fopts.trainable_bn_affine = true;

  auto params = model.parameters();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng = Rng::fork(seed, static_cast<uint64_t>(epoch), 0x65706f63ULL);
    rng.shuffle(order);
    for (int64_t start = 0; start + 2 <= opts.n_train; start += opts.batch_size) {
      const int64_t bs = std::min<int64_t>(opts.batch_size, opts.n_train - start);
      Tensor batch({bs, C, H, W});
      std::vector<int> labels(static_cast<size_t>(bs));
      for (int64_t j = 0; j < bs; ++j) {
        const int64_t src = order[static_cast<size_t>(start + j)];
        std::copy_n(train.images.data().begin() + src * per, per,
                    batch.data().begin() + j * per);
        labels[static_cast<size_t>(j)] = train.labels[static_cast<size_t>(src)];
      }
      adapt::Model::Forward fw = model.forward(batch, fopts);
      const autodiff::ValueId loss = fw.graph.softmax_cross_entropy(fw.logits, labels);
      const float loss_value = fw.graph.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        fail("train_source: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch));
      }
      autodiff::GradMap grads = fw.graph.backward(loss);
      autodiff::sgd_update(params, grads, opts.lr);
    }
  }
  model.freeze_source_stats();
  return model;
}

double clean_accuracy(adapt::Model& model, const data::SourceTask& task, int64_t n,
                      uint64_t first_uid, int batch_size) {
  model.set_strategy(norm::StrategyParams{});  // sbn
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t bs = std::min<int64_t>(batch_size, n - start);
    const data::LabeledBatch b = data::gen_source(task, bs, first_uid + static_cast<uint64_t>(start));
    adapt::Model::Forward fw = model.forward(b.images, adapt::ForwardOptions{});
    const std::vector<int> pred = adapt::argmax_rows(fw.graph.value(fw.logits));
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == b.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ExperimentResult run_experiment(const adapt::Model& source_model, const data::SourceTask& task,
                                const data::ScenarioSpec& spec,
                                const adapt::AdaptationConfig& cfg, bool timing) {
  spec.validate();
  cfg.validate();
  const data::Stream stream = data::build_stream(spec, task);
  adapt::AdaptSession session(source_model, cfg, spec.batch_size);

  ExperimentResult out;
  out.records.reserve(static_cast<size_t>(stream.size()));

  std::map<int, std::pair<int64_t, int64_t>> domain_hits;  // id -> (correct, total)
  double acc_sum = 0.0, score_sum = 0.0, latency_sum = 0.0;
  int backward_count = 0;

  for (int t = 0; t < stream.size(); ++t) {
    const data::LabeledBatch batch = stream.batch(t);
    const adapt::StepOutcome step = session.step(batch.images);

    int64_t correct = 0;
    for (size_t i = 0; i < step.predictions.size(); ++i) {
      const bool hit = step.predictions[i] == batch.labels[i];
      correct += hit;
      auto& d = domain_hits[batch.domain_ids[i]];
      d.first += hit;
      d.second += 1;
    }

    ExperimentRecord rec;
    rec.t = t;
    rec.acc = static_cast<double>(correct) / static_cast<double>(spec.batch_size);
    rec.score = step.gate.score;
    rec.threshold = step.gate.threshold;
    rec.branch = step.gate.in_cold_start ? "cold" : (step.gate.is_high ? "high" : "low");
    rec.did_backward = step.did_backward;
    rec.elapsed_ms = timing ? step.elapsed_seconds * 1000.0 : 0.0;
    rec.domain_ids = batch.domain_ids;

    acc_sum += rec.acc;
    score_sum += rec.score;
    latency_sum += rec.elapsed_ms;
    backward_count += rec.did_backward ? 1 : 0;
    out.records.push_back(std::move(rec));
  }

  ExperimentSummary& s = out.summary;
  s.method = adapt::to_string(cfg.method);
  s.scenario = data::to_string(spec.kind);
  s.seed = spec.seed;
  s.num_batches = stream.size();
  s.mean_acc = acc_sum / stream.size();
  s.mean_score = score_sum / stream.size();
  s.mean_latency_ms = latency_sum / stream.size();
  s.backward_count = backward_count;
  for (const auto& [id, hits] : domain_hits) {
    const std::string key =
        id >= 0 ? spec.domains[static_cast<size_t>(id)].str() : std::string("clean");
    s.per_domain_acc[key] =
        static_cast<double>(hits.first) / static_cast<double>(hits.second);
  }
  return out;
}

void write_records_csv(const std::vector<ExperimentRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("write_records_csv: cannot open '" + path + "'");
  os << "t,acc,score,threshold,branch,did_backward,elapsed_ms,domain_ids\n";
  for (const ExperimentRecord& r : records) {
    os << r.t << ',' << format_double(r.acc) << ',' << format_double(r.score) << ','
       << format_double(r.threshold) << ',' << r.branch << ',' << (r.did_backward ? 1 : 0) << ','
       << format_double(r.elapsed_ms) << ',';
    for (size_t i = 0; i < r.domain_ids.size(); ++i) {
      if (i) os << ';';
      os << r.domain_ids[i];
    }
    os << '\n';
  }
  if (!os) fail("write_records_csv: write failed for '" + path + "'");
}

std::vector<ExperimentRecord> read_records_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("read_records_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) fail("read_records_csv: empty file '" + path + "'");
  std::vector<ExperimentRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (cols.size() != 8) fail("read_records_csv: bad row '" + line + "'");
    ExperimentRecord r;
    r.t = std::stoi(cols[0]);
    r.acc = parse_double(cols[1]);
    r.score = parse_double(cols[2]);
    r.threshold = parse_double(cols[3]);
    r.branch = cols[4];
    r.did_backward = cols[5] == "1";
    r.elapsed_ms = parse_double(cols[6]);
    if (!cols[7].empty()) {
      std::stringstream ds(cols[7]);
      std::string id;
      while (std::getline(ds, id, ';')) r.domain_ids.push_back(std::stoi(id));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string summary_to_json(const ExperimentSummary& summary) {
  nlohmann::json j;
  j["method"] = summary.method;
  j["scenario"] = summary.scenario;
  j["seed"] = summary.seed;
  j["num_batches"] = summary.num_batches;
  j["mean_acc"] = summary.mean_acc;
  j["mean_score"] = summary.mean_score;
  j["mean_latency_ms"] = summary.mean_latency_ms;
  j["backward_count"] = summary.backward_count;
  j["per_domain_acc"] = summary.per_domain_acc;
  return j.dump();
}

void write_summary_json(const ExperimentSummary& summary, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("write_summary_json: cannot open '" + path + "'");
  os << summary_to_json(summary) << "\n";
  if (!os) fail("write_summary_json: write failed for '" + path + "'");
}

void write_score_svg(const std::vector<ExperimentRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail("write_score_svg: cannot open '" + path + "'");
  const int width = 720, height = 240, margin = 30;
  double max_v = 1e-12;
  for (const ExperimentRecord& r : records) {
    max_v = std::max({max_v, r.score, r.threshold});
  }
  const double sx = records.size() > 1
                        ? static_cast<double>(width - 2 * margin) / (records.size() - 1)
                        : 0.0;
  auto ypos = [&](double v) { return height - margin - v / max_v * (height - 2 * margin); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto polyline = [&](const char* color, auto getter) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < records.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", margin + sx * i, ypos(getter(records[i])));
      os << buf;
    }
    os << "\"/>\n";
  };
  polyline("#1f77b4", [](const ExperimentRecord& r) { return r.score; });
  polyline("#d62728", [](const ExperimentRecord& r) { return r.threshold; });
  os << "<text x=\"" << margin << "\" y=\"16\" font-size=\"12\">score (blue) / threshold (red)"
     << "</text>\n";
  os << "</svg>\n";
  if (!os) fail("write_score_svg: write failed for '" + path + "'");
}

void write_report(const ExperimentResult& result, const std::string& out_dir, bool plots) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_records_csv(result.records, (dir / "records.csv").string());
  write_summary_json(result.summary, (dir / "summary.json").string());
  if (plots) write_score_svg(result.records, (dir / "score_timeline.svg").string());
}

}  // namespace datta::harness
