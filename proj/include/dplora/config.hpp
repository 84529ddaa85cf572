#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dplora/datagen.hpp"
#include "dplora/errors.hpp"
#include "dplora/privacy.hpp"

namespace dplora {

enum class Accountant { kMoments, kSequential };

// Fully-resolved run settings. Exactly one of {sigma, eps_target} is engaged
// after resolution; when eps_target is set, sigma is derived at run start once
// the partition (hence q and rho_bar) is known.
struct TrainConfig {
  // run
  std::uint64_t seed = 42;
  bool baseline = false;
  std::string out_dir = ".";
  std::string metrics_file = "metrics.jsonl";
  std::string summary_file = "summary.csv";
  std::string checkpoint_file = "checkpoint.bin";
  std::string config_echo_file = "run_config.ini";
  std::string dump_dataset_file;  // empty = no dump
  std::uint64_t bytes_per_element = 4;

  // federation
  std::size_t nodes = 5;
  std::size_t rounds = 50;
  std::size_t batch = 8;
  double learning_rate = 5e-4;
  std::size_t local_steps = 1;
  std::size_t threads = 1;
  std::vector<double> weight_override;  // empty = rho_k from shard sizes

  // model
  std::size_t layers = 1;
  std::size_t width = 512;
  std::size_t rank = 512;
  double adapter_scale = 1.0;

  // data
  std::size_t samples = 2000;
  std::size_t dim = 512;
  std::size_t classes = 2;
  double margin = 10.0;
  PartitionMode partition = PartitionMode::kEven;
  double dirichlet_alpha = 1.0;

  // privacy
  std::optional<double> sigma = 2.0;     // explicit noise multiplier
  std::optional<double> eps_target;      // calibrate sigma to reach this
  double delta = 1e-5;
  double clip = 10.0;                    // +inf disables clipping
  Accountant accountant = Accountant::kMoments;
  CalibrationForm calibration_form = CalibrationForm::kTheorem;
  bool calibration_numeric = false;

  bool clip_enabled() const { return std::isfinite(clip); }
  std::uint64_t total_steps() const {
    return static_cast<std::uint64_t>(rounds) * static_cast<std::uint64_t>(local_steps);
  }
};

// Raw key-value capture from one source (file or flags); every field optional
// so sources can be merged with flag-over-file precedence before defaults.
struct ConfigValues {
  // run
  std::optional<std::uint64_t> seed;
  std::optional<bool> baseline;
  std::optional<std::string> out_dir;
  std::optional<std::string> metrics;
  std::optional<std::string> summary;
  std::optional<std::string> checkpoint;
  std::optional<std::string> config_echo;
  std::optional<std::string> dump_dataset;
  std::optional<std::uint64_t> bytes_per_element;
  // federation
  std::optional<std::uint64_t> nodes;
  std::optional<std::uint64_t> rounds;
  std::optional<std::uint64_t> batch;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> local_steps;
  std::optional<std::uint64_t> threads;
  std::optional<std::vector<double>> weights;
  // model
  std::optional<std::uint64_t> layers;
  std::optional<std::uint64_t> width;
  std::optional<std::uint64_t> rank;
  std::optional<double> scale;
  // data
  std::optional<std::uint64_t> samples;
  std::optional<std::uint64_t> dim;
  std::optional<std::uint64_t> classes;
  std::optional<double> margin;
  std::optional<std::string> partition;
  std::optional<double> alpha;
  // privacy
  std::optional<double> sigma;
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::optional<double> clip;
  std::optional<std::string> accountant;
  std::optional<std::string> calibration;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& v, const std::string& key) {
  if (v == "inf" || v == "+inf" || v == "none") {
    return std::numeric_limits<double>::infinity();
  }
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(key + ": empty list element");
    out.push_back(parse_double(item, key));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace detail

// Structured-text config: `[section]` headers, `key = value` lines, `#`/`;`
// full-line comments. Unknown sections or keys are errors naming the culprit.
inline ConfigValues parse_config_text(std::istream& is) {
  ConfigValues v;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      }
      section = detail::trim(t.substr(1, t.size() - 2));
      if (section != "run" && section != "federation" && section != "model" &&
          section != "data" && section != "privacy") {
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key +
                        "' outside any section");
    }
    const std::string qual = section + "." + key;
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_double_list;
    using detail::parse_u64;
    bool known = true;
    if (section == "run") {
      if (key == "seed") v.seed = parse_u64(val, qual);
      else if (key == "baseline") v.baseline = parse_bool(val, qual);
      else if (key == "out_dir") v.out_dir = val;
      else if (key == "metrics") v.metrics = val;
      else if (key == "summary") v.summary = val;
      else if (key == "checkpoint") v.checkpoint = val;
      else if (key == "config_echo") v.config_echo = val;
      else if (key == "dump_dataset") v.dump_dataset = val;
      else if (key == "bytes_per_element") v.bytes_per_element = parse_u64(val, qual);
      else known = false;
    } else if (section == "federation") {
      if (key == "nodes") v.nodes = parse_u64(val, qual);
      else if (key == "rounds") v.rounds = parse_u64(val, qual);
      else if (key == "batch") v.batch = parse_u64(val, qual);
      else if (key == "learning_rate") v.learning_rate = parse_double(val, qual);
      else if (key == "local_steps") v.local_steps = parse_u64(val, qual);
      else if (key == "threads") v.threads = parse_u64(val, qual);
      else if (key == "weights") v.weights = parse_double_list(val, qual);
      else known = false;
    } else if (section == "model") {
      if (key == "layers") v.layers = parse_u64(val, qual);
      else if (key == "width") v.width = parse_u64(val, qual);
      else if (key == "rank") v.rank = parse_u64(val, qual);
      else if (key == "scale") v.scale = parse_double(val, qual);
      else known = false;
    } else if (section == "data") {
      if (key == "samples") v.samples = parse_u64(val, qual);
      else if (key == "dim") v.dim = parse_u64(val, qual);
      else if (key == "classes") v.classes = parse_u64(val, qual);
      else if (key == "margin") v.margin = parse_double(val, qual);
      else if (key == "partition") v.partition = val;
      else if (key == "alpha") v.alpha = parse_double(val, qual);
      else known = false;
    } else {  // privacy
      if (key == "sigma") v.sigma = parse_double(val, qual);
      else if (key == "epsilon") v.epsilon = parse_double(val, qual);
      else if (key == "delta") v.delta = parse_double(val, qual);
      else if (key == "clip") v.clip = parse_double(val, qual);
      else if (key == "accountant") v.accountant = val;
      else if (key == "calibration") v.calibration = val;
      else known = false;
    }
    if (!known) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + qual + "'");
    }
  }
  return v;
}

inline ConfigValues parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_config_text(is);
}

// Overlay `over` onto `base`: any value present in `over` wins.
inline ConfigValues merge_config(ConfigValues base, const ConfigValues& over) {
  auto take = [](auto& dst, const auto& src) {
    if (src.has_value()) dst = src;
  };
  take(base.seed, over.seed);
  take(base.baseline, over.baseline);
  take(base.out_dir, over.out_dir);
  take(base.metrics, over.metrics);
  take(base.summary, over.summary);
  take(base.checkpoint, over.checkpoint);
  take(base.config_echo, over.config_echo);
  take(base.dump_dataset, over.dump_dataset);
  take(base.bytes_per_element, over.bytes_per_element);
  take(base.nodes, over.nodes);
  take(base.rounds, over.rounds);
  take(base.batch, over.batch);
  take(base.learning_rate, over.learning_rate);
  take(base.local_steps, over.local_steps);
  take(base.threads, over.threads);
  take(base.weights, over.weights);
  take(base.layers, over.layers);
  take(base.width, over.width);
  take(base.rank, over.rank);
  take(base.scale, over.scale);
  take(base.samples, over.samples);
  take(base.dim, over.dim);
  take(base.classes, over.classes);
  take(base.margin, over.margin);
  take(base.partition, over.partition);
  take(base.alpha, over.alpha);
  take(base.sigma, over.sigma);
  take(base.epsilon, over.epsilon);
  take(base.delta, over.delta);
  take(base.clip, over.clip);
  take(base.accountant, over.accountant);
  take(base.calibration, over.calibration);
  return base;
}

// Apply defaults, cross-field rules, and range checks. Every rejection names
// the offending key and the constraint it broke.
inline TrainConfig resolve_config(const ConfigValues& v) {
  TrainConfig c;

  if (v.seed) c.seed = *v.seed;
  if (v.baseline) c.baseline = *v.baseline;
  if (v.out_dir) c.out_dir = *v.out_dir;
  if (v.metrics) c.metrics_file = *v.metrics;
  if (v.summary) c.summary_file = *v.summary;
  if (v.checkpoint) c.checkpoint_file = *v.checkpoint;
  if (v.config_echo) c.config_echo_file = *v.config_echo;
  if (v.dump_dataset) c.dump_dataset_file = *v.dump_dataset;
  if (v.bytes_per_element) c.bytes_per_element = *v.bytes_per_element;
  if (c.bytes_per_element != 4 && c.bytes_per_element != 8) {
    throw ConfigError("run.bytes_per_element: must be 4 or 8");
  }

  if (v.nodes) c.nodes = *v.nodes;
  if (v.rounds) c.rounds = *v.rounds;
  if (v.batch) c.batch = *v.batch;
  if (v.learning_rate) c.learning_rate = *v.learning_rate;
  if (v.local_steps) c.local_steps = *v.local_steps;
  if (v.threads) c.threads = *v.threads;
  if (v.weights) c.weight_override = *v.weights;
  if (c.nodes == 0) throw ConfigError("federation.nodes: must be positive");
  if (c.rounds == 0) throw ConfigError("federation.rounds: must be positive");
  if (c.batch == 0) throw ConfigError("federation.batch: must be positive");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("federation.learning_rate: must be finite and non-negative");
  }
  if (c.local_steps == 0) throw ConfigError("federation.local_steps: must be positive");
  if (c.threads == 0 || c.threads > 256) {
    throw ConfigError("federation.threads: must be in [1, 256]");
  }

  if (v.layers) c.layers = *v.layers;
  // width and dim mirror each other: setting either sets both unless they
  // disagree explicitly.
  if (v.width && v.dim && *v.width != *v.dim) {
    throw ConfigError("model.width and data.dim must be equal (model input is the raw feature vector)");
  }
  if (v.width) c.width = *v.width;
  else if (v.dim) c.width = *v.dim;
  if (v.dim) c.dim = *v.dim;
  else c.dim = c.width;
  if (v.rank) c.rank = *v.rank;
  else if (c.rank > c.width) c.rank = c.width;  // default rank tracks small widths
  if (v.scale) c.adapter_scale = *v.scale;
  if (c.layers == 0) throw ConfigError("model.layers: must be positive");
  if (c.width == 0) throw ConfigError("model.width: must be positive");
  if (c.rank == 0 || c.rank > c.width) {
    throw ConfigError("model.rank: must be in [1, model.width]");
  }
  if (!(c.adapter_scale > 0.0) || !std::isfinite(c.adapter_scale)) {
    throw ConfigError("model.scale: must be finite and positive");
  }

  if (v.samples) c.samples = *v.samples;
  if (v.classes) c.classes = *v.classes;
  if (v.margin) c.margin = *v.margin;
  if (v.alpha) c.dirichlet_alpha = *v.alpha;
  if (v.partition) {
    if (*v.partition == "even") c.partition = PartitionMode::kEven;
    else if (*v.partition == "dirichlet") c.partition = PartitionMode::kDirichlet;
    else throw ConfigError("data.partition: expected 'even' or 'dirichlet', got '" + *v.partition + "'");
  }
  if (c.samples == 0) throw ConfigError("data.samples: must be positive");
  if (c.classes == 0) throw ConfigError("data.classes: must be positive");
  if (c.classes > c.dim) throw ConfigError("data.classes: must be <= data.dim");
  if (c.classes > c.width) throw ConfigError("data.classes: must be <= model.width");
  if (!(c.margin >= 0.0) || !std::isfinite(c.margin)) {
    throw ConfigError("data.margin: must be finite and nonnegative");
  }
  if (!(c.dirichlet_alpha > 0.0)) throw ConfigError("data.alpha: must be positive");
  if (c.samples < c.nodes * c.batch) {
    throw ConfigError("data.samples: must be >= federation.nodes * federation.batch (" +
                      std::to_string(c.nodes * c.batch) + ")");
  }

  if (!c.weight_override.empty()) {
    if (c.weight_override.size() != c.nodes) {
      throw ConfigError("federation.weights: expected " + std::to_string(c.nodes) +
                        " entries, got " + std::to_string(c.weight_override.size()));
    }
    double sum = 0.0;
    for (double w : c.weight_override) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw ConfigError("federation.weights: entries must be finite and nonnegative");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw ConfigError("federation.weights: must sum to 1 within 1e-12");
    }
  }

  // privacy selection: exactly one of sigma / epsilon; the sigma=2 default
  // applies only when neither is given.
  if (v.sigma && v.epsilon) {
    throw ConfigError("privacy.sigma and privacy.epsilon are mutually exclusive; set exactly one");
  }
  if (v.delta) c.delta = *v.delta;
  if (!(c.delta > 0.0) || !(c.delta < 1.0)) {
    throw ConfigError("privacy.delta: must lie in (0, 1)");
  }
  if (v.clip) c.clip = *v.clip;
  if (!(c.clip > 0.0)) throw ConfigError("privacy.clip: must be positive (or 'inf' to disable)");
  if (v.epsilon) {
    if (!(*v.epsilon > 0.0) || !std::isfinite(*v.epsilon)) {
      throw ConfigError("privacy.epsilon: must be finite and positive");
    }
    c.eps_target = *v.epsilon;
    c.sigma.reset();
  } else if (v.sigma) {
    if (!(*v.sigma >= 0.0) || !std::isfinite(*v.sigma)) {
      throw ConfigError("privacy.sigma: must be finite and nonnegative");
    }
    c.sigma = *v.sigma;
  }  // else keep the default sigma = 2

  if (v.accountant) {
    if (*v.accountant == "moments") c.accountant = Accountant::kMoments;
    else if (*v.accountant == "sequential") c.accountant = Accountant::kSequential;
    else throw ConfigError("privacy.accountant: expected 'moments' or 'sequential', got '" +
                           *v.accountant + "'");
  }
  if (v.calibration) {
    if (*v.calibration == "theorem") {
      c.calibration_form = CalibrationForm::kTheorem;
      c.calibration_numeric = false;
    } else if (*v.calibration == "proof") {
      c.calibration_form = CalibrationForm::kProof;
      c.calibration_numeric = false;
    } else if (*v.calibration == "numeric") {
      c.calibration_numeric = true;
    } else {
      throw ConfigError("privacy.calibration: expected 'theorem', 'proof' or 'numeric', got '" +
                        *v.calibration + "'");
    }
  }

  const bool noise_requested = c.eps_target.has_value() || (c.sigma && *c.sigma > 0.0);
  if (noise_requested && !c.clip_enabled()) {
    throw ConfigError("privacy.clip: noise scale is sigma * clip; clip must be finite when "
                      "sigma > 0 or epsilon is set");
  }
  if (c.baseline && (v.sigma.has_value() || v.epsilon.has_value())) {
    if (c.eps_target || *c.sigma > 0.0) {
      throw ConfigError("run.baseline: the dense baseline is non-private; do not set "
                        "privacy.sigma or privacy.epsilon");
    }
  }
  if (c.baseline) {
    c.sigma = 0.0;  // baseline never noises
    c.eps_target.reset();
  }
  return c;
}

// Fully-resolved, re-parseable config text; written next to run outputs so a
// run can be reproduced from its artifacts alone.
inline std::string echo_config(const TrainConfig& c, std::optional<double> resolved_sigma = {}) {
  std::ostringstream os;
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(17);
  os << "[run]\n";
  os << "seed = " << c.seed << "\n";
  os << "baseline = " << (c.baseline ? "true" : "false") << "\n";
  os << "out_dir = " << c.out_dir << "\n";
  os << "metrics = " << c.metrics_file << "\n";
  os << "summary = " << c.summary_file << "\n";
  os << "checkpoint = " << c.checkpoint_file << "\n";
  os << "config_echo = " << c.config_echo_file << "\n";
  if (!c.dump_dataset_file.empty()) os << "dump_dataset = " << c.dump_dataset_file << "\n";
  os << "bytes_per_element = " << c.bytes_per_element << "\n";
  os << "\n[federation]\n";
  os << "nodes = " << c.nodes << "\n";
  os << "rounds = " << c.rounds << "\n";
  os << "batch = " << c.batch << "\n";
  os << "learning_rate = " << c.learning_rate << "\n";
  os << "local_steps = " << c.local_steps << "\n";
  os << "threads = " << c.threads << "\n";
  if (!c.weight_override.empty()) {
    os << "weights = ";
    for (std::size_t i = 0; i < c.weight_override.size(); ++i) {
      if (i) os << ",";
      os << c.weight_override[i];
    }
    os << "\n";
  }
  os << "\n[model]\n";
  os << "layers = " << c.layers << "\n";
  os << "width = " << c.width << "\n";
  os << "rank = " << c.rank << "\n";
  os << "scale = " << c.adapter_scale << "\n";
  os << "\n[data]\n";
  os << "samples = " << c.samples << "\n";
  os << "dim = " << c.dim << "\n";
  os << "classes = " << c.classes << "\n";
  os << "margin = " << c.margin << "\n";
  os << "partition = " << (c.partition == PartitionMode::kEven ? "even" : "dirichlet") << "\n";
  os << "alpha = " << c.dirichlet_alpha << "\n";
  os << "\n[privacy]\n";
  if (resolved_sigma) {
    if (c.eps_target) {
      os << "# sigma below was calibrated from epsilon = " << *c.eps_target << " (mode "
         << (c.calibration_numeric
                 ? "numeric"
                 : (c.calibration_form == CalibrationForm::kProof ? "proof" : "theorem"))
         << ")\n";
    }
    os << "sigma = " << *resolved_sigma << "\n";
  } else if (c.sigma) {
    os << "sigma = " << *c.sigma << "\n";
  } else if (c.eps_target) {
    os << "epsilon = " << *c.eps_target << "\n";
  }
  os << "delta = " << c.delta << "\n";
  if (c.clip_enabled()) os << "clip = " << c.clip << "\n";
  else os << "clip = inf\n";
  os << "accountant = " << (c.accountant == Accountant::kMoments ? "moments" : "sequential")
     << "\n";
  os << "calibration = "
     << (c.calibration_numeric
             ? "numeric"
             : (c.calibration_form == CalibrationForm::kProof ? "proof" : "theorem"))
     << "\n";
  return os.str();
}

}  // namespace dplora
