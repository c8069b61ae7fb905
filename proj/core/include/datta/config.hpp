#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "datta/adaptation.hpp"
#include "datta/datagen.hpp"
#include "datta/harness.hpp"
#include "datta/model.hpp"

namespace datta::cfg {

/// Flat `key = value` lines with dotted sections; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_config_text(const std::string& text);
/// Throws std::runtime_error naming the path when the file cannot be read.
KeyValues parse_config_file(const std::string& path);

struct KeyDoc {
  const char* key;
  const char* default_value;
  const char* doc;
};

/// The full config key catalog, used by validation and --help.
const std::vector<KeyDoc>& key_catalog();

/// Merged view of task, model, training, scenario, adaptation and report
/// settings. Every key is validated up front; unknown keys are errors
/// (std::invalid_argument).
struct RunConfig {
  data::SourceTask task;
  adapt::ModelSpec model;
  harness::TrainOptions train;
  int train_epochs = 24;
  data::ScenarioSpec scenario;
  adapt::AdaptationConfig adapt;
  std::optional<norm::Strategy> norm_override;  // forward-only methods
  bool report_timing = false;
  bool report_plots = true;

  /// Builds from parsed keys. Scenario-only keys (kind, domains, ...) may
  /// appear bare, as written by scenario files.
  static RunConfig from_keys(const KeyValues& keys);

  /// Applies the override resolution for norm.strategy and re-validates.
  void finalize();
};

}  // namespace datta::cfg
