// dplora: federated DP-LoRA simulator CLI.
// Subcommands: train, calibrate, account, overhead, selftest.
// Exit codes: 0 success, 2 configuration error, 3 accountant regime error,
// 4 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dplora/config.hpp"
#include "dplora/errors.hpp"
#include "dplora/federation.hpp"
#include "dplora/ledger.hpp"
#include "dplora/lora.hpp"
#include "dplora/metrics.hpp"
#include "dplora/privacy.hpp"

namespace {

using nlohmann::json;

struct CommonArgs {
  std::string config_path;
  dplora::ConfigValues flags;
};

// Every config key gets a flag of the same name; values land in the same
// optional-field capture used for files, so precedence is a plain merge.
void add_config_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (INI-style; see README)");
  auto& v = args.flags;
  // run
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&v](const std::uint64_t& x) { v.seed = x; }, "master RNG seed");
  cmd->add_flag_function(
      "--baseline", [&v](std::int64_t) { v.baseline = true; },
      "dense FedAvg baseline (no adapters, no privacy)");
  cmd->add_option_function<std::string>(
      "--out_dir", [&v](const std::string& x) { v.out_dir = x; }, "output directory");
  cmd->add_option_function<std::string>(
      "--metrics", [&v](const std::string& x) { v.metrics = x; }, "metrics JSONL filename");
  cmd->add_option_function<std::string>(
      "--summary", [&v](const std::string& x) { v.summary = x; }, "summary CSV filename");
  cmd->add_option_function<std::string>(
      "--checkpoint", [&v](const std::string& x) { v.checkpoint = x; },
      "checkpoint filename");
  cmd->add_option_function<std::string>(
      "--config_echo", [&v](const std::string& x) { v.config_echo = x; },
      "resolved-config filename");
  cmd->add_option_function<std::string>(
      "--dump_dataset", [&v](const std::string& x) { v.dump_dataset = x; },
      "also dump the synthetic dataset to this file");
  cmd->add_option_function<std::uint64_t>(
      "--bytes_per_element", [&v](const std::uint64_t& x) { v.bytes_per_element = x; },
      "wire bytes per parameter (4 or 8)");
  // federation
  cmd->add_option_function<std::uint64_t>(
      "--nodes", [&v](const std::uint64_t& x) { v.nodes = x; }, "number of nodes K");
  cmd->add_option_function<std::uint64_t>(
      "--rounds", [&v](const std::uint64_t& x) { v.rounds = x; }, "federated rounds T");
  cmd->add_option_function<std::uint64_t>(
      "--batch", [&v](const std::uint64_t& x) { v.batch = x; }, "local batch size B");
  cmd->add_option_function<double>(
      "--learning_rate", [&v](const double& x) { v.learning_rate = x; },
      "SGD step size gamma");
  cmd->add_option_function<std::uint64_t>(
      "--local_steps", [&v](const std::uint64_t& x) { v.local_steps = x; },
      "gradient steps per node per round");
  cmd->add_option_function<std::uint64_t>(
      "--threads", [&v](const std::uint64_t& x) { v.threads = x; },
      "worker threads for node updates");
  cmd->add_option_function<std::string>(
      "--weights",
      [&v](const std::string& x) {
        v.weights = dplora::detail::parse_double_list(x, "federation.weights");
      },
      "aggregation weight override, comma-separated");
  // model
  cmd->add_option_function<std::uint64_t>(
      "--layers", [&v](const std::uint64_t& x) { v.layers = x; }, "model layers L");
  cmd->add_option_function<std::uint64_t>(
      "--width", [&v](const std::uint64_t& x) { v.width = x; }, "layer width n");
  cmd->add_option_function<std::uint64_t>(
      "--rank", [&v](const std::uint64_t& x) { v.rank = x; }, "adapter rank r");
  cmd->add_option_function<double>(
      "--scale", [&v](const double& x) { v.scale = x; }, "adapter product scale");
  // data
  cmd->add_option_function<std::uint64_t>(
      "--samples", [&v](const std::uint64_t& x) { v.samples = x; }, "dataset size N");
  cmd->add_option_function<std::uint64_t>(
      "--dim", [&v](const std::uint64_t& x) { v.dim = x; }, "feature dimension d");
  cmd->add_option_function<std::uint64_t>(
      "--classes", [&v](const std::uint64_t& x) { v.classes = x; }, "class count");
  cmd->add_option_function<double>(
      "--margin", [&v](const double& x) { v.margin = x; }, "cluster center separation");
  cmd->add_option_function<std::string>(
      "--partition", [&v](const std::string& x) { v.partition = x; },
      "shard mode: even | dirichlet");
  cmd->add_option_function<double>(
      "--alpha", [&v](const double& x) { v.alpha = x; }, "dirichlet concentration");
  // privacy
  cmd->add_option_function<double>(
      "--sigma", [&v](const double& x) { v.sigma = x; }, "noise multiplier sigma");
  cmd->add_option_function<double>(
      "--epsilon", [&v](const double& x) { v.epsilon = x; },
      "target epsilon (calibrates sigma; exclusive with --sigma)");
  cmd->add_option_function<double>(
      "--delta", [&v](const double& x) { v.delta = x; }, "privacy delta");
  cmd->add_option_function<std::string>(
      "--clip",
      [&v](const std::string& x) { v.clip = dplora::detail::parse_double(x, "privacy.clip"); },
      "gradient clip bound C ('inf' disables clipping)");
  cmd->add_option_function<std::string>(
      "--accountant", [&v](const std::string& x) { v.accountant = x; },
      "accountant: moments | sequential");
  cmd->add_option_function<std::string>(
      "--calibration", [&v](const std::string& x) { v.calibration = x; },
      "sigma calibration: theorem | proof | numeric");
}

dplora::TrainConfig resolve_from(const CommonArgs& args) {
  dplora::ConfigValues base;
  if (const char* env = std::getenv("DPLORA_OUT_DIR"); env && *env) {
    base.out_dir = std::string(env);
  }
  if (!args.config_path.empty()) {
    base = dplora::merge_config(std::move(base), dplora::parse_config_file(args.config_path));
  }
  return dplora::resolve_config(dplora::merge_config(std::move(base), args.flags));
}

std::string under_out_dir(const dplora::TrainConfig& cfg, const std::string& file) {
  std::filesystem::path p(file);
  if (p.is_absolute()) return file;
  return (std::filesystem::path(cfg.out_dir) / p).string();
}

int cmd_train(const CommonArgs& args) {
  const dplora::TrainConfig cfg = resolve_from(args);
  std::filesystem::create_directories(cfg.out_dir);

  dplora::RunResult res = dplora::run(cfg);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";

  dplora::write_metrics(under_out_dir(cfg, cfg.metrics_file), res.records);
  dplora::write_summary_csv(under_out_dir(cfg, cfg.summary_file), res.records);
  dplora::save_checkpoint(under_out_dir(cfg, cfg.checkpoint_file), res.model, cfg.seed);
  {
    const std::string echo_path = under_out_dir(cfg, cfg.config_echo_file);
    std::ofstream os(echo_path, std::ios::binary);
    if (!os) throw dplora::IoError("cannot open " + echo_path);
    os << dplora::echo_config(cfg, cfg.eps_target ? std::optional<double>(res.sigma_used)
                                                  : std::nullopt);
  }
  if (!cfg.dump_dataset_file.empty()) {
    dplora::save_dataset(under_out_dir(cfg, cfg.dump_dataset_file), res.data);
  }

  const auto& last = res.records.back();
  json out;
  out["mode"] = cfg.baseline ? "fedavg_baseline" : "dp_lora";
  out["rounds"] = last.t;
  out["final_loss"] = last.loss;
  out["final_acc"] = last.acc;
  if (last.eps_spent) {
    out["eps_spent"] = *last.eps_spent;
    out["delta"] = *last.delta;
  } else {
    out["eps_spent"] = nullptr;
    out["delta"] = nullptr;
  }
  out["sigma"] = res.sigma_used;
  out["q"] = res.q;
  out["rho_bar"] = res.rho;
  out["upload_params_per_node"] = res.upload_params_per_node;
  out["metrics"] = under_out_dir(cfg, cfg.metrics_file);
  std::cout << out.dump(2) << "\n";
  return 0;
}

// Shared derivation for calibrate/account: unstated quantities come from the
// (possibly defaulted) config, assuming the even split it would produce.
struct AccountingInputs {
  double q;
  double rho;
  std::uint64_t steps;
  double delta;
};

AccountingInputs derive_inputs(const dplora::TrainConfig& cfg, std::optional<double> q,
                               std::optional<double> rho) {
  AccountingInputs in{};
  if (q) {
    in.q = *q;
  } else {
    if (cfg.partition != dplora::PartitionMode::kEven) {
      throw dplora::ConfigError(
          "sampling rate is shard-dependent under dirichlet partitioning; pass --q");
    }
    const std::size_t min_shard = cfg.samples / cfg.nodes;  // even split floor
    if (min_shard == 0 || cfg.batch > min_shard) {
      throw dplora::ConfigError("data.samples: even shards smaller than the batch");
    }
    in.q = static_cast<double>(cfg.batch) / static_cast<double>(min_shard);
  }
  if (rho) {
    in.rho = *rho;
  } else if (!cfg.weight_override.empty()) {
    in.rho = dplora::rho_bar(cfg.weight_override);
  } else {
    std::vector<double> w(cfg.nodes, 1.0 / static_cast<double>(cfg.nodes));
    in.rho = dplora::rho_bar(w);
  }
  in.steps = static_cast<std::uint64_t>(cfg.rounds) *
             static_cast<std::uint64_t>(cfg.local_steps);
  in.delta = cfg.delta;
  return in;
}

int cmd_calibrate(const CommonArgs& args, std::optional<double> q, std::optional<double> rho,
                  const std::string& mode) {
  const dplora::TrainConfig cfg = resolve_from(args);
  if (!cfg.eps_target) {
    throw dplora::ConfigError("calibrate: requires --epsilon (the target budget)");
  }
  const AccountingInputs in = derive_inputs(cfg, q, rho);

  double sigma = 0.0;
  if (mode == "theorem" || mode == "proof") {
    sigma = dplora::sigma_calibrate_formula(in.q, in.steps, *cfg.eps_target, in.delta, in.rho,
                                            mode == "proof"
                                                ? dplora::CalibrationForm::kProof
                                                : dplora::CalibrationForm::kTheorem);
  } else if (mode == "numeric") {
    sigma = dplora::sigma_calibrate_numeric(in.q, in.steps, in.delta, in.rho, *cfg.eps_target);
  } else {
    throw dplora::ConfigError("calibrate: --mode must be theorem, proof or numeric");
  }

  json out;
  out["sigma"] = sigma;
  out["mode"] = mode;
  out["epsilon"] = *cfg.eps_target;
  out["delta"] = in.delta;
  out["q"] = in.q;
  out["steps"] = in.steps;
  out["rho_bar"] = in.rho;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_account(const CommonArgs& args, std::optional<double> q, std::optional<double> rho) {
  const dplora::TrainConfig cfg = resolve_from(args);
  if (!cfg.sigma) {
    throw dplora::ConfigError("account: requires --sigma (epsilon targets have no spend yet)");
  }
  const double sigma = *cfg.sigma;
  if (!(sigma > 0.0)) {
    throw dplora::ConfigError("account: sigma must be positive (sigma = 0 disables accounting)");
  }
  const AccountingInputs in = derive_inputs(cfg, q, rho);

  json out;
  out["sigma"] = sigma;
  out["q"] = in.q;
  out["steps"] = in.steps;
  out["delta"] = in.delta;
  out["rho_bar"] = in.rho;
  const dplora::PrivacySpent seq = dplora::sequential_from_sigma(sigma, in.steps, in.delta);
  out["sequential"] = {{"eps", seq.eps}, {"delta", seq.delta}};
  try {
    const double eps = dplora::moments_epsilon(in.q, sigma, in.rho, in.steps, in.delta);
    out["moments"] = {{"eps", eps},
                      {"delta", in.delta},
                      {"lambda_max", dplora::moments_lambda_max(in.q, sigma, in.rho)}};
  } catch (const dplora::RegimeError& e) {
    out["moments"] = {{"error", e.what()}};
    std::cout << out.dump(2) << "\n";
    throw;  // regime questions are never answered silently: exit 3
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_overhead(std::uint64_t layers, std::uint64_t width, std::uint64_t rank,
                 std::uint64_t nodes, std::uint64_t rounds, std::uint64_t proj,
                 std::optional<std::uint64_t> dense_total,
                 std::optional<std::uint64_t> adapted, bool table) {
  dplora::ModelShape shape;
  shape.layers = layers;
  shape.width = width;
  shape.projections = proj;
  const dplora::AttentionParams attn = dplora::attention_param_count(shape);
  const dplora::OverheadReport rep = dplora::lora_overhead(rounds, nodes, layers, rank, width);
  // The single-layer reading of the total, alongside the formula's own value;
  // published worked examples disagree on whether L enters, so emit both.
  const dplora::OverheadReport single = dplora::lora_overhead(rounds, nodes, 1, rank, width);

  json out;
  out["shape"] = {{"layers", layers}, {"width", width}, {"rank", rank},
                  {"projections", proj}, {"nodes", nodes}, {"rounds", rounds}};
  out["attention_params"] = {{"per_block", attn.per_block}, {"total", attn.total}};
  out["adapter_params"] = {
      {"per_matrix_pair", 2 * rank * width},
      {"dense_per_matrix", rep.baseline_per_matrix},
      {"per_round_per_node", rep.per_round_per_node},
      {"total", rep.total},
      {"total_single_layer_reading", single.total}};
  out["baseline_total"] = rep.baseline_total;
  out["ratio_vs_dense_matrices"] = rep.ratio;
  if (dense_total) {
    std::uint64_t adapted_count = 0;
    std::string source;
    if (adapted) {
      adapted_count = *adapted;
      source = "reported, not derived";
    } else {
      adapted_count = dplora::detail::checked_mul(
          dplora::detail::checked_mul(layers, proj, "overhead"),
          dplora::detail::checked_mul(2 * rank, width, "overhead"), "overhead");
      source = "derived from shape (attention-region adapters)";
    }
    out["reduction"] = {{"adapted", adapted_count},
                        {"dense_total", *dense_total},
                        {"percent", dplora::reduction_ratio(adapted_count, *dense_total)},
                        {"adapted_source", source}};
  }
  std::cout << out.dump(2) << "\n";

  if (table) {
    std::cout << "\n"
              << "quantity                          value\n"
              << "--------------------------------  --------------------\n"
              << "attention params / block          " << attn.per_block << "\n"
              << "attention params total            " << attn.total << "\n"
              << "adapter pair (2 n r)              " << 2 * rank * width << "\n"
              << "dense matrix (n^2)                " << rep.baseline_per_matrix << "\n"
              << "upload / node / round             " << rep.per_round_per_node << "\n"
              << "upload total (T K L 2 n r)        " << rep.total << "\n"
              << "upload total (single-layer read)  " << single.total << "\n";
  }
  return 0;
}

int fail_check(const std::string& name) {
  std::cout << "FAIL " << name << "\n";
  return 4;
}

// Quick built-in oracle checks; a cheap health probe, not the full test suite.
int cmd_selftest() {
  using namespace dplora;
  {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
      Matrix g = gaussian_sample<double>(rng, 8, 8, 0.0, 10.0);
      const double c = 0.5 + 10.0 * rng.next_uniform();
      if (!(frobenius_norm(clip_gradient(g, c)) <= c)) return fail_check("clip-invariant");
    }
    std::cout << "ok clip-invariant\n";
  }
  {
    const AttentionParams attn =
        attention_param_count(ModelShape{32, 4096, 3, 0});
    if (attn.per_block != 50331648ULL || attn.total != 1610612736ULL) {
      return fail_check("overhead-integers");
    }
    const OverheadReport rep = lora_overhead(50, 5, 1, 256, 4096);
    if (rep.total != 524288000ULL || rep.baseline_per_matrix != 16777216ULL) {
      return fail_check("overhead-integers");
    }
    std::cout << "ok overhead-integers\n";
  }
  {
    const double q = 0.01, sigma = 4.0, rho = 1.0, delta = 1e-5;
    const std::uint64_t steps = 1000;
    const std::uint64_t lmax = moments_lambda_max(q, sigma, rho);
    if (lmax < 1) return fail_check("moments-sweep");
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t lam = 1; lam <= lmax; ++lam) {
      const double alpha =
          q * q * static_cast<double>(lam) * (static_cast<double>(lam) + 1.0) /
          ((1.0 - q) * rho * rho * sigma * sigma);
      best = std::min(best, (static_cast<double>(steps) * alpha + std::log(1.0 / delta)) /
                                static_cast<double>(lam));
    }
    if (moments_epsilon(q, sigma, rho, steps, delta) != best) {
      return fail_check("moments-sweep");
    }
    std::cout << "ok moments-sweep\n";
  }
  {
    Rng a = Rng::substream(123, StreamDomain::kNodeRound, 3, 9);
    Rng b = Rng::substream(123, StreamDomain::kNodeRound, 3, 9);
    for (int i = 0; i < 100; ++i) {
      if (a.next_u64() != b.next_u64()) return fail_check("rng-substreams");
    }
    std::cout << "ok rng-substreams\n";
  }
  {
    std::vector<RoundRecord> recs(3);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      recs[i].t = i + 1;
      recs[i].loss = 0.3 / static_cast<double>(i + 1);
      recs[i].acc = 0.5 + 0.1 * static_cast<double>(i);
      recs[i].eps_spent = 0.25 * static_cast<double>(i + 1);
      recs[i].delta = 1e-5;
      recs[i].bytes_up = 1024 * (i + 1);
      recs[i].bytes_down = 2048;
    }
    std::stringstream ss;
    write_metrics(ss, recs);
    const auto back = read_metrics(ss);
    if (back.size() != recs.size()) return fail_check("metrics-roundtrip");
    for (std::size_t i = 0; i < recs.size(); ++i) {
      if (!back[i].same_logged_fields(recs[i])) return fail_check("metrics-roundtrip");
    }
    std::cout << "ok metrics-roundtrip\n";
  }
  std::cout << "selftest passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated DP-LoRA simulator: private low-rank adapter training "
               "across simulated nodes, with verifiable privacy accounting and "
               "exact communication ledgers."};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train = app.add_subcommand("train", "run federated training");
  add_config_flags(train, train_args);

  CommonArgs cal_args;
  std::optional<double> cal_q, cal_rho;
  std::string cal_mode = "theorem";
  CLI::App* calibrate = app.add_subcommand("calibrate", "derive sigma from a privacy target");
  add_config_flags(calibrate, cal_args);
  calibrate->add_option("--q", cal_q, "sampling rate override");
  calibrate->add_option("--rho_bar", cal_rho, "aggregation-weight norm override");
  calibrate->add_option("--mode", cal_mode, "theorem | proof | numeric");

  CommonArgs acc_args;
  std::optional<double> acc_q, acc_rho;
  CLI::App* account = app.add_subcommand("account", "compute spent (eps, delta) for a sigma");
  add_config_flags(account, acc_args);
  account->add_option("--q", acc_q, "sampling rate override");
  account->add_option("--rho_bar", acc_rho, "aggregation-weight norm override");

  std::uint64_t oh_layers = 32, oh_width = 4096, oh_rank = 256, oh_nodes = 5, oh_rounds = 50,
                oh_proj = 3;
  std::optional<std::uint64_t> oh_dense_total, oh_adapted;
  bool oh_table = false;
  CLI::App* overhead = app.add_subcommand("overhead", "communication/parameter arithmetic");
  overhead->add_option("--layers", oh_layers, "transformer blocks L");
  overhead->add_option("--width", oh_width, "hidden width n");
  overhead->add_option("--rank", oh_rank, "adapter rank r");
  overhead->add_option("--nodes", oh_nodes, "nodes K");
  overhead->add_option("--rounds", oh_rounds, "rounds T");
  overhead->add_option("--proj", oh_proj, "adapted square matrices per block");
  overhead->add_option("--dense_total", oh_dense_total, "full model parameter count");
  overhead->add_option("--adapted", oh_adapted,
                       "reported adapted-parameter count (labeled 'reported, not derived')");
  overhead->add_flag("--table", oh_table, "also print a human-readable table");

  app.add_subcommand("selftest", "run quick built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;     // command-line problems are configuration errors
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (calibrate->parsed()) {
      // --sigma makes no sense while calibrating; refuse the combination.
      if (cal_args.flags.sigma.has_value()) {
        throw dplora::ConfigError("calibrate: --sigma conflicts with calibration; set --epsilon");
      }
      return cmd_calibrate(cal_args, cal_q, cal_rho, cal_mode);
    }
    if (account->parsed()) return cmd_account(acc_args, acc_q, acc_rho);
    if (overhead->parsed()) {
      return cmd_overhead(oh_layers, oh_width, oh_rank, oh_nodes, oh_rounds, oh_proj,
                          oh_dense_total, oh_adapted, oh_table);
    }
    return cmd_selftest();
  } catch (const dplora::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dplora::RegimeError& e) {
    std::cerr << "accountant regime error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
