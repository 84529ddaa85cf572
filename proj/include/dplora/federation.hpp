#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dplora/config.hpp"
#include "dplora/datagen.hpp"
#include "dplora/errors.hpp"
#include "dplora/ledger.hpp"
#include "dplora/lora.hpp"
#include "dplora/metrics.hpp"
#include "dplora/privacy.hpp"
#include "dplora/rng.hpp"

namespace dplora {

// One participant: a shard of the shared dataset, an aggregation weight, and
// a private model replica. Shard contents never travel between nodes; only
// adapter (or dense-weight) matrices do.
struct NodeState {
  std::size_t node_id = 0;
  const Dataset* data = nullptr;
  std::vector<std::size_t> shard;
  double rho = 0.0;
  LoraModel<double> model;
};

struct AdapterUpload {
  std::vector<Matrix> a;
  std::vector<Matrix> b;
};

struct DenseUpload {
  std::vector<Matrix> w;
  std::vector<Matrix> bias;
};

// Copy the global adapters onto every node, bitwise. Bases are never sent:
// they were replicated once at setup and stay frozen.
inline void broadcast(const LoraModel<double>& global, std::vector<NodeState>& nodes) {
  for (auto& node : nodes) {
    if (node.model.layer_count() != global.layer_count() ||
        node.model.width() != global.width() || node.model.rank() != global.rank()) {
      throw ProtocolError("broadcast: node " + std::to_string(node.node_id) +
                          " model shape differs from global");
    }
    for (std::size_t l = 0; l < global.layer_count(); ++l) {
      node.model.set_adapter(l, global.layers()[l].adapter.a, global.layers()[l].adapter.b);
    }
  }
}

inline void broadcast_dense(const LoraModel<double>& global, std::vector<NodeState>& nodes) {
  for (auto& node : nodes) {
    if (node.model.layer_count() != global.layer_count() ||
        node.model.width() != global.width()) {
      throw ProtocolError("broadcast_dense: node " + std::to_string(node.node_id) +
                          " model shape differs from global");
    }
    for (std::size_t l = 0; l < global.layer_count(); ++l) {
      node.model.set_dense(l, global.layers()[l].base, global.layers()[l].bias);
    }
  }
}

// One local round: sample a batch, take adapter gradients, clip each matrix to
// the bound, add N(0, (sigma * clip)^2) noise to each, and apply one SGD step.
// All randomness comes from the (seed, node, round) substream, so the result
// is independent of scheduling. Returns the updated adapter matrices.
inline AdapterUpload node_update(NodeState& node, const TrainConfig& cfg, double sigma,
                                 std::size_t round) {
  if (node.shard.size() < cfg.batch) {
    throw ConfigError("node_update: node " + std::to_string(node.node_id) + " shard has " +
                      std::to_string(node.shard.size()) + " samples < batch " +
                      std::to_string(cfg.batch));
  }
  Rng rng = Rng::substream(cfg.seed, StreamDomain::kNodeRound, node.node_id, round);
  for (std::size_t step = 0; step < cfg.local_steps; ++step) {
    const auto local = sample_without_replacement(rng, node.shard.size(), cfg.batch);
    std::vector<std::size_t> idx(local.size());
    for (std::size_t j = 0; j < local.size(); ++j) idx[j] = node.shard[local[j]];
    auto [x, y] = node.data->gather(idx);
    GradResult<double> g = node.model.gradients(x, y, TrainableSet::kAdapters);
    if (cfg.clip_enabled()) {
      for (auto& layer_grads : g.adapters) {
        layer_grads.a = gaussian_mechanism(layer_grads.a, cfg.clip, sigma, rng);
        layer_grads.b = gaussian_mechanism(layer_grads.b, cfg.clip, sigma, rng);
      }
    }
    node.model.apply_adapter_update(g.adapters, cfg.learning_rate);
  }
  AdapterUpload up;
  for (const auto& layer : node.model.layers()) {
    up.a.push_back(layer.adapter.a);
    up.b.push_back(layer.adapter.b);
  }
  return up;
}

// Dense-baseline counterpart: plain SGD on the square weights and biases, no
// clipping, no noise.
inline DenseUpload node_update_dense(NodeState& node, const TrainConfig& cfg,
                                     std::size_t round) {
  if (node.shard.size() < cfg.batch) {
    throw ConfigError("node_update_dense: node " + std::to_string(node.node_id) +
                      " shard has " + std::to_string(node.shard.size()) +
                      " samples < batch " + std::to_string(cfg.batch));
  }
  Rng rng = Rng::substream(cfg.seed, StreamDomain::kNodeRound, node.node_id, round);
  for (std::size_t step = 0; step < cfg.local_steps; ++step) {
    const auto local = sample_without_replacement(rng, node.shard.size(), cfg.batch);
    std::vector<std::size_t> idx(local.size());
    for (std::size_t j = 0; j < local.size(); ++j) idx[j] = node.shard[local[j]];
    auto [x, y] = node.data->gather(idx);
    GradResult<double> g = node.model.gradients(x, y, TrainableSet::kDense);
    node.model.apply_dense_update(g.dense, cfg.learning_rate);
  }
  DenseUpload up;
  for (const auto& layer : node.model.layers()) {
    up.w.push_back(layer.base);
    up.bias.push_back(layer.bias);
  }
  return up;
}

namespace detail {

inline void check_simplex(const std::vector<double>& weights, std::size_t k) {
  if (weights.size() != k) throw ProtocolError("aggregate: weight count != upload count");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !(w <= 1.0)) {
      throw ProtocolError("aggregate: weights must lie in [0, 1]");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ProtocolError("aggregate: weights must sum to 1 within 1e-12");
  }
}

}  // namespace detail

// Weighted average of uploads, accumulated in ascending node order so the
// result is a deterministic function of the inputs regardless of scheduling.
inline AdapterUpload aggregate(const std::vector<AdapterUpload>& uploads,
                               const std::vector<double>& weights) {
  if (uploads.empty()) throw ProtocolError("aggregate: no uploads");
  detail::check_simplex(weights, uploads.size());
  const std::size_t layers = uploads[0].a.size();
  AdapterUpload out;
  out.a.reserve(layers);
  out.b.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    out.a.emplace_back(uploads[0].a[l].rows(), uploads[0].a[l].cols());
    out.b.emplace_back(uploads[0].b[l].rows(), uploads[0].b[l].cols());
  }
  for (std::size_t k = 0; k < uploads.size(); ++k) {
    if (uploads[k].a.size() != layers || uploads[k].b.size() != layers) {
      throw ProtocolError("aggregate: upload " + std::to_string(k) + " layer count differs");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (!uploads[k].a[l].same_shape(out.a[l]) || !uploads[k].b[l].same_shape(out.b[l])) {
        throw ProtocolError("aggregate: upload " + std::to_string(k) + " shape differs");
      }
      axpy(out.a[l], weights[k], uploads[k].a[l]);
      axpy(out.b[l], weights[k], uploads[k].b[l]);
    }
  }
  return out;
}

inline DenseUpload aggregate_dense(const std::vector<DenseUpload>& uploads,
                                   const std::vector<double>& weights) {
  if (uploads.empty()) throw ProtocolError("aggregate_dense: no uploads");
  detail::check_simplex(weights, uploads.size());
  const std::size_t layers = uploads[0].w.size();
  DenseUpload out;
  for (std::size_t l = 0; l < layers; ++l) {
    out.w.emplace_back(uploads[0].w[l].rows(), uploads[0].w[l].cols());
    out.bias.emplace_back(uploads[0].bias[l].rows(), uploads[0].bias[l].cols());
  }
  for (std::size_t k = 0; k < uploads.size(); ++k) {
    if (uploads[k].w.size() != layers || uploads[k].bias.size() != layers) {
      throw ProtocolError("aggregate_dense: upload " + std::to_string(k) +
                          " layer count differs");
    }
    for (std::size_t l = 0; l < layers; ++l) {
      if (!uploads[k].w[l].same_shape(out.w[l]) ||
          !uploads[k].bias[l].same_shape(out.bias[l])) {
        throw ProtocolError("aggregate_dense: upload " + std::to_string(k) + " shape differs");
      }
      axpy(out.w[l], weights[k], uploads[k].w[l]);
      axpy(out.bias[l], weights[k], uploads[k].bias[l]);
    }
  }
  return out;
}

struct RunResult {
  std::vector<RoundRecord> records;
  LoraModel<double> model;
  Dataset data;
  std::vector<double> weights;
  double sigma_used = 0.0;
  bool accounting = false;
  double q = 0.0;
  double rho = 0.0;
  std::uint64_t upload_params_per_node = 0;
  std::vector<std::string> warnings;
};

namespace detail {

// Run a callable over node indices [0, n) on up to `threads` workers. Each
// node is owned by exactly one worker; exceptions are rethrown in index order.
template <typename Fn>
void for_each_node(std::size_t n, std::size_t threads, Fn&& fn) {
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// Federated DP-LoRA: T rounds of broadcast -> concurrent local updates ->
// weighted aggregation, with cumulative privacy tracked by the configured
// accountant. Deterministic for a fixed config and seed, including across
// thread counts.
inline RunResult run_federated(const TrainConfig& cfg) {
  RunResult res;
  res.data = make_synthetic(cfg.seed, cfg.samples, cfg.dim, cfg.classes, cfg.margin);
  const Partition part =
      make_partition(res.data, cfg.nodes, cfg.partition, cfg.seed, cfg.dirichlet_alpha);
  res.weights = cfg.weight_override.empty() ? part.weights() : cfg.weight_override;
  res.rho = rho_bar(res.weights);

  std::size_t min_shard = part.shards[0].size();
  for (const auto& s : part.shards) min_shard = std::min(min_shard, s.size());
  if (min_shard < cfg.batch) {
    throw ConfigError("run_federated: smallest shard (" + std::to_string(min_shard) +
                      " samples) cannot supply a batch of " + std::to_string(cfg.batch));
  }
  res.q = static_cast<double>(cfg.batch) / static_cast<double>(min_shard);

  // Resolve the noise multiplier: explicit sigma, or calibrated to the target
  // epsilon now that q and rho_bar are known.
  double sigma = 0.0;
  if (cfg.eps_target) {
    if (!(res.q < 1.0)) {
      throw RegimeError("run_federated: calibration needs sampling rate q < 1");
    }
    sigma = cfg.calibration_numeric
                ? sigma_calibrate_numeric(res.q, cfg.total_steps(), cfg.delta, res.rho,
                                          *cfg.eps_target)
                : sigma_calibrate_formula(res.q, cfg.total_steps(), *cfg.eps_target,
                                          cfg.delta, res.rho, cfg.calibration_form);
  } else {
    sigma = *cfg.sigma;
  }
  res.sigma_used = sigma;
  res.accounting = sigma > 0.0;

  if (cfg.local_steps > 1) {
    res.warnings.push_back(
        "local_steps > 1 composes privacy per local step; the one-step-per-round "
        "analysis does not cover this schedule directly");
  }

  // Fail fast on an unanswerable accountant before any work happens.
  double seq_eps_step = 0.0, seq_delta_step = 0.0;
  if (res.accounting) {
    if (cfg.accountant == Accountant::kMoments) {
      if (!(res.q < 1.0)) {
        throw RegimeError("run_federated: moments accountant needs sampling rate q < 1");
      }
      (void)moments_epsilon(res.q, sigma, res.rho, cfg.total_steps(), cfg.delta);
    } else {
      seq_delta_step = cfg.delta / static_cast<double>(cfg.total_steps());
      seq_eps_step = std::sqrt(2.0 * std::log(1.25 / seq_delta_step)) / sigma;
    }
  }

  Rng init_rng = Rng::substream(cfg.seed, StreamDomain::kModelInit);
  res.model = LoraModel<double>::init(init_rng, cfg.layers, cfg.width, cfg.rank,
                                      cfg.classes, cfg.adapter_scale);
  const std::uint64_t frozen_hash = res.model.base_hash();

  std::vector<NodeState> nodes(cfg.nodes);
  for (std::size_t k = 0; k < cfg.nodes; ++k) {
    nodes[k].node_id = k;
    nodes[k].data = &res.data;
    nodes[k].shard = part.shards[k];
    nodes[k].rho = res.weights[k];
    nodes[k].model = res.model;
  }

  res.upload_params_per_node = lora_param_count(cfg.layers, cfg.width, cfg.rank);
  const std::uint64_t bytes_each =
      bytes_on_wire(res.upload_params_per_node, cfg.bytes_per_element);
  const std::uint64_t bytes_round =
      detail::checked_mul(bytes_each, cfg.nodes, "run_federated bytes");

  res.records.reserve(cfg.rounds);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    broadcast(res.model, nodes);
    std::vector<AdapterUpload> uploads(cfg.nodes);
    detail::for_each_node(cfg.nodes, cfg.threads, [&](std::size_t k) {
      uploads[k] = node_update(nodes[k], cfg, sigma, t);
    });
    AdapterUpload agg = aggregate(uploads, res.weights);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      res.model.set_adapter(l, std::move(agg.a[l]), std::move(agg.b[l]));
    }

    const EvalResult eval = res.model.evaluate(res.data.features, res.data.labels);
    RoundRecord rec;
    rec.t = t;
    rec.loss = eval.loss;
    rec.acc = eval.accuracy;
    if (res.accounting) {
      const std::uint64_t steps = static_cast<std::uint64_t>(t) * cfg.local_steps;
      if (cfg.accountant == Accountant::kMoments) {
        rec.eps_spent = moments_epsilon(res.q, sigma, res.rho, steps, cfg.delta);
        rec.delta = cfg.delta;
      } else {
        rec.eps_spent = static_cast<double>(steps) * seq_eps_step;
        rec.delta = static_cast<double>(steps) * seq_delta_step;
      }
    }
    rec.bytes_up = bytes_round;
    rec.bytes_down = bytes_round;
    rec.upload_params_per_node.assign(cfg.nodes, res.upload_params_per_node);
    res.records.push_back(std::move(rec));
  }
  // Final re-broadcast so node replicas hold the model being evaluated.
  broadcast(res.model, nodes);

  if (res.model.base_hash() != frozen_hash) {
    throw ProtocolError("run_federated: frozen base weights changed during training");
  }
  for (const auto& node : nodes) {
    if (node.model.base_hash() != frozen_hash) {
      throw ProtocolError("run_federated: node " + std::to_string(node.node_id) +
                          " base weights changed during training");
    }
  }
  return res;
}

// Vanilla FedAvg over the dense weights: no adapters trained, no privacy.
// Kept structurally parallel to run_federated for overhead/utility comparison.
inline RunResult run_fedavg_baseline(const TrainConfig& cfg) {
  RunResult res;
  res.data = make_synthetic(cfg.seed, cfg.samples, cfg.dim, cfg.classes, cfg.margin);
  const Partition part =
      make_partition(res.data, cfg.nodes, cfg.partition, cfg.seed, cfg.dirichlet_alpha);
  res.weights = cfg.weight_override.empty() ? part.weights() : cfg.weight_override;
  res.rho = rho_bar(res.weights);

  std::size_t min_shard = part.shards[0].size();
  for (const auto& s : part.shards) min_shard = std::min(min_shard, s.size());
  if (min_shard < cfg.batch) {
    throw ConfigError("run_fedavg_baseline: smallest shard (" + std::to_string(min_shard) +
                      " samples) cannot supply a batch of " + std::to_string(cfg.batch));
  }
  res.q = static_cast<double>(cfg.batch) / static_cast<double>(min_shard);
  res.sigma_used = 0.0;
  res.accounting = false;

  Rng init_rng = Rng::substream(cfg.seed, StreamDomain::kModelInit);
  res.model = LoraModel<double>::init(init_rng, cfg.layers, cfg.width, cfg.rank,
                                      cfg.classes, cfg.adapter_scale);

  std::vector<NodeState> nodes(cfg.nodes);
  for (std::size_t k = 0; k < cfg.nodes; ++k) {
    nodes[k].node_id = k;
    nodes[k].data = &res.data;
    nodes[k].shard = part.shards[k];
    nodes[k].rho = res.weights[k];
    nodes[k].model = res.model;
  }

  res.upload_params_per_node = dense_trainable_count(cfg.layers, cfg.width);
  const std::uint64_t bytes_each =
      bytes_on_wire(res.upload_params_per_node, cfg.bytes_per_element);
  const std::uint64_t bytes_round =
      detail::checked_mul(bytes_each, cfg.nodes, "run_fedavg_baseline bytes");

  res.records.reserve(cfg.rounds);
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    broadcast_dense(res.model, nodes);
    std::vector<DenseUpload> uploads(cfg.nodes);
    detail::for_each_node(cfg.nodes, cfg.threads, [&](std::size_t k) {
      uploads[k] = node_update_dense(nodes[k], cfg, t);
    });
    DenseUpload agg = aggregate_dense(uploads, res.weights);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      res.model.set_dense(l, std::move(agg.w[l]), std::move(agg.bias[l]));
    }

    const EvalResult eval = res.model.evaluate(res.data.features, res.data.labels);
    RoundRecord rec;
    rec.t = t;
    rec.loss = eval.loss;
    rec.acc = eval.accuracy;
    rec.bytes_up = bytes_round;
    rec.bytes_down = bytes_round;
    rec.upload_params_per_node.assign(cfg.nodes, res.upload_params_per_node);
    res.records.push_back(std::move(rec));
  }
  broadcast_dense(res.model, nodes);
  return res;
}

inline RunResult run(const TrainConfig& cfg) {
  return cfg.baseline ? run_fedavg_baseline(cfg) : run_federated(cfg);
}

}  // namespace dplora
