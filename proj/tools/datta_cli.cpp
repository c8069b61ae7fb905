// Command-line entry point: train the source model, replay adaptation runs,
// and sweep method/scenario/seed grids.
//
// Exit codes: 0 ok, 2 usage/config, 3 data/checkpoint, 4 runtime.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "datta/checkpoint.hpp"
#include "datta/config.hpp"
#include "datta/harness.hpp"
#include "json.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

namespace fs = std::filesystem;
using datta::cfg::KeyValues;
using datta::cfg::RunConfig;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string config_key_help() {
  std::ostringstream os;
  os << "Config keys (key = value, '#' comments, flags override files):\n";
  for (const auto& doc : datta::cfg::key_catalog()) {
    os << "  " << doc.key;
    if (doc.default_value && *doc.default_value) os << " (default " << doc.default_value << ")";
    os << " -- " << doc.doc << "\n";
  }
  return os.str();
}

KeyValues load_keys(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  try {
    return datta::cfg::parse_config_file(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void apply_overrides(KeyValues& keys, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    keys[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
}

// DATTA_SEED is the fallback when neither file nor flag provided a seed.
void apply_env_seed(KeyValues& keys) {
  const char* env = std::getenv("DATTA_SEED");
  if (!env) return;
  if (!keys.count("task.seed") && !keys.count("seed")) keys["task.seed"] = env;
  if (!keys.count("scenario.seed") && !keys.count("seed")) keys["scenario.seed"] = env;
}

RunConfig build_config(const KeyValues& keys) {
  try {
    return RunConfig::from_keys(keys);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

datta::adapt::Model load_ckpt_checked(const std::string& path, const RunConfig& rc) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  datta::adapt::Model model = [&] {
    try {
      return datta::harness::load_checkpoint(path);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  }();
  const datta::adapt::ModelSpec& s = model.spec();
  if (s.in_channels != rc.task.channels || s.image_h != rc.task.height ||
      s.image_w != rc.task.width || s.num_classes != rc.task.num_classes) {
    throw DataError("checkpoint '" + path + "' is incompatible with the configured task shape");
  }
  return model;
}

int cmd_train(const std::string& config_path, const std::string& out_path,
              const std::vector<std::string>& sets, std::optional<uint64_t> seed) {
  KeyValues keys;
  if (!config_path.empty()) keys = load_keys(config_path);
  apply_overrides(keys, sets);
  apply_env_seed(keys);
  if (seed) keys["task.seed"] = std::to_string(*seed);
  RunConfig rc = build_config(keys);

  datta::adapt::Model model = datta::harness::train_source(rc.task, rc.model, rc.train_epochs,
                                                           rc.task.seed, rc.train);
  const double acc = datta::harness::clean_accuracy(
      model, rc.task, rc.train.n_eval, static_cast<uint64_t>(rc.train.n_train));

  const fs::path out(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  datta::harness::save_checkpoint(model, out_path);

  nlohmann::json j;
  j["checkpoint"] = out_path;
  j["held_out_acc"] = acc;
  j["train_seed"] = rc.task.seed;
  std::cout << j.dump() << "\n";
  return kExitOk;
}

int cmd_run(const std::string& ckpt_path, const std::string& scenario_path,
            const std::string& method, const std::string& out_dir, const std::string& config_path,
            const std::vector<std::string>& sets, std::optional<uint64_t> seed, bool timing,
            bool no_plots) {
  KeyValues keys;
  if (!config_path.empty()) keys = load_keys(config_path);
  if (!scenario_path.empty()) {
    for (const auto& [k, v] : load_keys(scenario_path)) keys[k] = v;
  }
  apply_overrides(keys, sets);
  apply_env_seed(keys);
  if (!method.empty()) keys["adapt.method"] = method;
  if (seed) keys["scenario.seed"] = std::to_string(*seed);
  if (timing) keys["report.timing"] = "on";
  if (no_plots) keys["report.plots"] = "off";
  RunConfig rc = build_config(keys);

  datta::adapt::Model model = load_ckpt_checked(ckpt_path, rc);
  datta::harness::ExperimentResult result =
      datta::harness::run_experiment(model, rc.task, rc.scenario, rc.adapt, rc.report_timing);
  datta::harness::write_report(result, out_dir, rc.report_plots);
  std::cout << datta::harness::summary_to_json(result.summary) << "\n";
  return kExitOk;
}

struct SweepCell {
  std::string method;
  std::string scenario_file;
  std::string scenario_name;
  uint64_t seed = 0;
};

int cmd_sweep(const std::string& ckpt_path, const std::string& grid_path,
              const std::string& out_dir, const std::string& config_path,
              const std::vector<std::string>& sets, int jobs) {
  if (jobs < 1) throw UsageError("--jobs must be >= 1");
  KeyValues base;
  if (!config_path.empty()) base = load_keys(config_path);
  apply_overrides(base, sets);
  apply_env_seed(base);

  const KeyValues grid = load_keys(grid_path);
  auto grid_list = [&](const char* key) {
    std::vector<std::string> out;
    auto it = grid.find(key);
    if (it == grid.end()) return out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto a = item.find_first_not_of(" \t");
      const auto b = item.find_last_not_of(" \t");
      if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    }
    return out;
  };
  const std::vector<std::string> methods = grid_list("methods");
  const std::vector<std::string> scenarios = grid_list("scenarios");
  const std::vector<std::string> seeds_raw = grid_list("seeds");
  if (methods.empty() || scenarios.empty() || seeds_raw.empty()) {
    throw UsageError("sweep grid is empty: needs methods, scenarios, seeds");
  }

  std::vector<SweepCell> cells;
  for (const std::string& m : methods) {
    (void)datta::adapt::method_from_string(m);  // validate early
    for (const std::string& sc : scenarios) {
      if (!fs::exists(sc)) throw UsageError("scenario file not found: " + sc);
      for (const std::string& sd : seeds_raw) {
        SweepCell cell;
        cell.method = m;
        cell.scenario_file = sc;
        cell.scenario_name = fs::path(sc).stem().string();
        cell.seed = std::stoull(sd);
        cells.push_back(std::move(cell));
      }
    }
  }
  std::sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
    return std::tie(a.method, a.scenario_name, a.seed) <
           std::tie(b.method, b.scenario_name, b.seed);
  });

  // Validate configs and checkpoint compatibility up front.
  std::vector<RunConfig> configs;
  configs.reserve(cells.size());
  for (const SweepCell& cell : cells) {
    KeyValues keys = base;
    for (const auto& [k, v] : load_keys(cell.scenario_file)) keys[k] = v;
    keys["adapt.method"] = cell.method;
    keys["scenario.seed"] = std::to_string(cell.seed);
    configs.push_back(build_config(keys));
  }
  datta::adapt::Model model = load_ckpt_checked(ckpt_path, configs.front());

  fs::create_directories(out_dir);
  std::vector<datta::harness::ExperimentSummary> summaries(cells.size());
  std::atomic<size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const SweepCell& cell = cells[i];
      const RunConfig& rc = configs[i];
      datta::harness::ExperimentResult result = datta::harness::run_experiment(
          model, rc.task, rc.scenario, rc.adapt, rc.report_timing);
      const fs::path cell_dir = fs::path(out_dir) / (cell.method + "_" + cell.scenario_name +
                                                     "_s" + std::to_string(cell.seed));
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        datta::harness::write_report(result, cell_dir.string(), rc.report_plots);
      }
      summaries[i] = result.summary;
      summaries[i].scenario = cell.scenario_name;
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = std::min<int>(jobs, static_cast<int>(cells.size()));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  const fs::path table_path = fs::path(out_dir) / "sweep.csv";
  std::ofstream os(table_path);
  if (!os) throw std::runtime_error("cannot write " + table_path.string());
  os << "method,scenario,seed,mean_acc,mean_score,backward_count,num_batches\n";
  std::ostringstream echo;
  for (const auto& s : summaries) {
    std::ostringstream row;
    row << s.method << ',' << s.scenario << ',' << s.seed << ',' << s.mean_acc << ','
        << s.mean_score << ',' << s.backward_count << ',' << s.num_batches;
    os << row.str() << "\n";
    echo << row.str() << "\n";
  }
  std::cout << echo.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DATTA test-time adaptation workbench"};
  app.footer(config_key_help());
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, scenario_path, method, out_dir, grid_path;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  bool timing = false, no_plots = false;
  int jobs = 1;

  CLI::App* train = app.add_subcommand("train", "Train the source model and save a checkpoint");
  train->add_option("--config", config_path, "config file (key = value)");
  train->add_option("--out", out_path, "checkpoint output path")->required();
  train->add_option("--set", sets, "override config keys (key=value)");
  train->add_option("--seed", seed, "task seed override");

  CLI::App* run = app.add_subcommand("run", "Replay one scenario through one method");
  run->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  run->add_option("--scenario", scenario_path, "scenario config file");
  run->add_option("--method", method, "source|bn_stats|tent|datta|iabn_only|unmix");
  run->add_option("--out-dir", out_dir, "report output directory")->required();
  run->add_option("--config", config_path, "base config file");
  run->add_option("--set", sets, "override config keys (key=value)");
  run->add_option("--seed", seed, "stream seed override");
  run->add_flag("--timing", timing, "record wall time (output no longer reproducible)");
  run->add_flag("--no-plots", no_plots, "skip the SVG timeline");

  CLI::App* sweep = app.add_subcommand("sweep", "Cross product of methods x scenarios x seeds");
  sweep->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  sweep->add_option("--grid", grid_path, "grid file: methods, scenarios, seeds")->required();
  sweep->add_option("--out-dir", out_dir, "output directory")->required();
  sweep->add_option("--config", config_path, "base config file");
  sweep->add_option("--set", sets, "override config keys (key=value)");
  sweep->add_option("--jobs", jobs, "parallel cells")->default_val(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_path, sets, seed);
    if (run->parsed())
      return cmd_run(ckpt_path, scenario_path, method, out_dir, config_path, sets, seed, timing,
                     no_plots);
    if (sweep->parsed())
      return cmd_sweep(ckpt_path, grid_path, out_dir, config_path, sets, jobs);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
