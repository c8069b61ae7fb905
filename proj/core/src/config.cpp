#include "datta/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace datta::cfg {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  fail("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& item : split(v, ',')) out.push_back(to_int(key, item));
  if (out.empty()) fail("config: key '" + key + "' expects a comma list of integers");
  return out;
}

}  // namespace

KeyValues parse_config_text(const std::string& text) {
  KeyValues out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail("config: line " + std::to_string(lineno) + " is not 'key = value': '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("config: empty key on line " + std::to_string(lineno));
    out[key] = value;
  }
  return out;
}

KeyValues parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

const std::vector<KeyDoc>& key_catalog() {
  static const std::vector<KeyDoc> catalog = {
      {"task.seed", "0", "seed of the procedural source task"},
      {"task.num_classes", "10", "class count (the recipe catalog is 10-way)"},
      {"task.channels", "3", "image channels"},
      {"task.height", "32", "image height"},
      {"task.width", "32", "image width"},
      {"model.widths", "12,24,48", "output channels per conv block"},
      {"model.kernels", "5,3,3", "square kernel size per conv block"},
      {"model.strides", "2,2,1", "stride per conv block"},
      {"train.epochs", "24", "source training epochs"},
      {"train.n", "3072", "training set size"},
      {"train.n_eval", "1024", "held-out evaluation set size"},
      {"train.batch_size", "64", "training batch size"},
      {"train.lr", "0.3", "source-training SGD learning rate"},
      {"scenario.kind", "dynamic", "dynamic | dynamic_s | non_iid | multi_non_iid"},
      {"scenario.domains", "gaussian_noise:5,brightness:5,contrast:5,pixelate:5",
       "comma list of corruption:severity"},
      {"scenario.batch_size", "64", "test batch size"},
      {"scenario.num_batches", "100", "stream length in batches"},
      {"scenario.delta", "1.0", "Dirichlet concentration for non-i.i.d. kinds"},
      {"scenario.seed", "0", "stream seed"},
      {"scenario.run_length", "10", "dynamic_s segment length in batches"},
      {"adapt.method", "datta", "source | bn_stats | tent | datta | iabn_only | unmix"},
      {"adapt.alpha", "0.2", "DABN adjustment level"},
      {"adapt.kappa", "4", "confidence level of the source statistics"},
      {"adapt.lr", "0.0001", "test-time SGD learning rate on BN affine params"},
      {"adapt.update_fraction", "100", "m% of BN sites eligible for updates"},
      {"adapt.bn_stats_alpha", "0.5", "source weight of the bn_stats baseline"},
      {"adapt.iabn_alpha", "1.0", "correction level of the iabn_only baseline"},
      {"adapt.force_gate", "none", "none | high | low (ablation override)"},
      {"dd.lambda_pct", "50", "diversity threshold percentile, in (0,100)"},
      {"dd.t_init", "16", "cold-start batches"},
      {"dd.granularity", "per_sample", "per_sample | per_activation angle features"},
      {"dd.window", "unbounded", "score cache bound: unbounded or a batch count"},
      {"daft.literal_indicator", "false", "update on S>Q instead of the prose reading"},
      {"norm.strategy", "auto", "override normalizer of forward-only methods"},
      {"norm.alpha", "", "alpha of the alpha_bn/iabn strategies (defaults per method)"},
      {"norm.kappa", "4", "synonym of adapt.kappa"},
      {"norm.K", "16", "unmix component count"},
      {"norm.lambda0", "0.1", "unmix ideal momentum"},
      {"norm.B0", "64", "unmix ideal batch size"},
      {"norm.temperature", "0.07", "unmix assignment softmax temperature"},
      {"norm.psi", "shrink", "shrink | literal dead-zone handling"},
      {"norm.threshold_scale", "sqrt", "sqrt | raw threshold scale"},
      {"report.timing", "off", "record wall time per batch (non-reproducible output)"},
      {"report.plots", "on", "emit the score/threshold SVG"},
  };
  return catalog;
}

RunConfig RunConfig::from_keys(const KeyValues& raw) {
  // Scenario files may use the bare spec keys.
  static const std::map<std::string, std::string> bare = {
      {"kind", "scenario.kind"},           {"domains", "scenario.domains"},
      {"batch_size", "scenario.batch_size"}, {"num_batches", "scenario.num_batches"},
      {"delta", "scenario.delta"},         {"seed", "scenario.seed"},
      {"run_length", "scenario.run_length"},
  };
  KeyValues keys;
  for (const auto& [k, v] : raw) {
    auto it = bare.find(k);
    keys[it != bare.end() ? it->second : k] = v;
  }

  for (const auto& [k, v] : keys) {
    bool known = false;
    for (const KeyDoc& doc : key_catalog()) {
      if (k == doc.key) {
        known = true;
        break;
      }
    }
    if (!known) fail("config: unknown key '" + k + "'");
  }

  RunConfig rc;
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = keys.find(key);
    if (it == keys.end()) return std::nullopt;
    return it->second;
  };

  if (auto v = get("task.seed")) rc.task.seed = to_u64("task.seed", *v);
  if (auto v = get("task.num_classes")) rc.task.num_classes = to_int("task.num_classes", *v);
  if (auto v = get("task.channels")) rc.task.channels = to_int("task.channels", *v);
  if (auto v = get("task.height")) rc.task.height = to_int("task.height", *v);
  if (auto v = get("task.width")) rc.task.width = to_int("task.width", *v);
  rc.task.validate();

  {
    std::vector<int> widths = {12, 24, 48}, kernels = {5, 3, 3}, strides = {2, 2, 1};
    if (auto v = get("model.widths")) widths = to_int_list("model.widths", *v);
    if (auto v = get("model.kernels")) kernels = to_int_list("model.kernels", *v);
    if (auto v = get("model.strides")) strides = to_int_list("model.strides", *v);
    if (widths.size() != kernels.size() || widths.size() != strides.size()) {
      fail("config: model.widths/kernels/strides must have equal length");
    }
    rc.model.in_channels = rc.task.channels;
    rc.model.image_h = rc.task.height;
    rc.model.image_w = rc.task.width;
    rc.model.num_classes = rc.task.num_classes;
    rc.model.convs.clear();
    for (size_t i = 0; i < widths.size(); ++i) {
      rc.model.convs.push_back({widths[i], kernels[i], strides[i]});
    }
    rc.model.validate();
  }

  if (auto v = get("train.epochs")) rc.train_epochs = to_int("train.epochs", *v);
  if (auto v = get("train.n")) rc.train.n_train = to_int("train.n", *v);
  if (auto v = get("train.n_eval")) rc.train.n_eval = to_int("train.n_eval", *v);
  if (auto v = get("train.batch_size")) rc.train.batch_size = to_int("train.batch_size", *v);
  if (auto v = get("train.lr")) rc.train.lr = static_cast<float>(to_double("train.lr", *v));
  if (rc.train_epochs < 1) fail("config: train.epochs must be >= 1");

  rc.scenario.domains = {data::Domain{data::CorruptionKind::kGaussianNoise, 5},
                         data::Domain{data::CorruptionKind::kBrightness, 5},
                         data::Domain{data::CorruptionKind::kContrast, 5},
                         data::Domain{data::CorruptionKind::kPixelate, 5}};
  if (auto v = get("scenario.kind")) rc.scenario.kind = data::scenario_from_string(*v);
  if (auto v = get("scenario.domains")) {
    rc.scenario.domains.clear();
    for (const std::string& item : split(*v, ',')) {
      rc.scenario.domains.push_back(data::Domain::parse(item));
    }
  }
  if (auto v = get("scenario.batch_size"))
    rc.scenario.batch_size = to_int("scenario.batch_size", *v);
  if (auto v = get("scenario.num_batches"))
    rc.scenario.num_batches = to_int("scenario.num_batches", *v);
  if (auto v = get("scenario.delta")) rc.scenario.delta = to_double("scenario.delta", *v);
  if (auto v = get("scenario.seed")) rc.scenario.seed = to_u64("scenario.seed", *v);
  if (auto v = get("scenario.run_length"))
    rc.scenario.run_length = to_int("scenario.run_length", *v);
  rc.scenario.validate();

  if (auto v = get("adapt.method")) rc.adapt.method = adapt::method_from_string(*v);
  if (auto v = get("adapt.alpha"))
    rc.adapt.alpha = static_cast<float>(to_double("adapt.alpha", *v));
  if (auto v = get("adapt.kappa"))
    rc.adapt.kappa = static_cast<float>(to_double("adapt.kappa", *v));
  if (auto v = get("norm.kappa"))
    rc.adapt.kappa = static_cast<float>(to_double("norm.kappa", *v));
  if (auto v = get("adapt.lr")) rc.adapt.lr = static_cast<float>(to_double("adapt.lr", *v));
  if (auto v = get("adapt.update_fraction"))
    rc.adapt.update_fraction = to_double("adapt.update_fraction", *v);
  if (auto v = get("adapt.bn_stats_alpha"))
    rc.adapt.bn_stats_alpha = static_cast<float>(to_double("adapt.bn_stats_alpha", *v));
  if (auto v = get("adapt.iabn_alpha"))
    rc.adapt.iabn_alpha = static_cast<float>(to_double("adapt.iabn_alpha", *v));
  if (auto v = get("norm.alpha")) {
    const float a = static_cast<float>(to_double("norm.alpha", *v));
    rc.adapt.bn_stats_alpha = a;
    rc.adapt.iabn_alpha = a;
  }
  if (auto v = get("adapt.force_gate")) {
    if (*v == "none") rc.adapt.force_gate = adapt::ForceGate::kNone;
    else if (*v == "high") rc.adapt.force_gate = adapt::ForceGate::kHigh;
    else if (*v == "low") rc.adapt.force_gate = adapt::ForceGate::kLow;
    else fail("config: adapt.force_gate must be none|high|low");
  }

  if (auto v = get("dd.lambda_pct")) rc.adapt.lambda_pct = to_double("dd.lambda_pct", *v);
  if (auto v = get("dd.t_init")) rc.adapt.t_init = to_int("dd.t_init", *v);
  if (auto v = get("dd.granularity")) {
    if (*v == "per_sample") rc.adapt.per_activation = false;
    else if (*v == "per_activation") rc.adapt.per_activation = true;
    else fail("config: dd.granularity must be per_sample|per_activation");
  }
  if (auto v = get("dd.window")) {
    rc.adapt.dd_window = *v == "unbounded" ? 0 : to_int("dd.window", *v);
  }
  if (auto v = get("daft.literal_indicator"))
    rc.adapt.literal_indicator = to_bool("daft.literal_indicator", *v);

  if (auto v = get("norm.strategy")) {
    if (*v != "auto") rc.norm_override = norm::strategy_from_string(*v);
  }
  if (auto v = get("norm.K")) rc.adapt.unmix_k = to_int("norm.K", *v);
  if (auto v = get("norm.lambda0"))
    rc.adapt.lambda0 = static_cast<float>(to_double("norm.lambda0", *v));
  if (auto v = get("norm.B0")) rc.adapt.b0 = to_int("norm.B0", *v);
  if (auto v = get("norm.temperature"))
    rc.adapt.temperature = static_cast<float>(to_double("norm.temperature", *v));
  if (auto v = get("norm.psi")) {
    if (*v == "shrink") rc.adapt.psi_mode = norm::PsiMode::kShrink;
    else if (*v == "literal") rc.adapt.psi_mode = norm::PsiMode::kLiteral;
    else fail("config: norm.psi must be shrink|literal");
  }
  if (auto v = get("norm.threshold_scale")) {
    if (*v == "sqrt") rc.adapt.threshold_scale = norm::ThresholdScale::kSqrt;
    else if (*v == "raw") rc.adapt.threshold_scale = norm::ThresholdScale::kRaw;
    else fail("config: norm.threshold_scale must be sqrt|raw");
  }

  if (auto v = get("report.timing")) rc.report_timing = to_bool("report.timing", *v);
  if (auto v = get("report.plots")) rc.report_plots = to_bool("report.plots", *v);

  rc.finalize();
  return rc;
}

void RunConfig::finalize() {
  adapt.validate();
  if (norm_override) {
    const norm::Strategy s = *norm_override;
    const bool forward_only = adapt.method == adapt::Method::kSource ||
                              adapt.method == adapt::Method::kBnStats ||
                              adapt.method == adapt::Method::kIabnOnly ||
                              adapt.method == adapt::Method::kUnmix;
    if (adapt.method == adapt::Method::kDatta && s != norm::Strategy::kDabn) {
      fail("config: norm.strategy for method datta must be dabn");
    }
    if (adapt.method == adapt::Method::kTent && s != norm::Strategy::kTbn) {
      fail("config: norm.strategy for method tent must be tbn");
    }
    if (s == norm::Strategy::kUnmix && adapt.method != adapt::Method::kUnmix) {
      fail("config: the unmix strategy requires adapt.method = unmix");
    }
    if (forward_only) adapt.strategy_override = s;
  }
}

}  // namespace datta::cfg
