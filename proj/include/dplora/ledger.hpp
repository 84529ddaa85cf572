#pragma once

#include <cstdint>
#include <string>

#include "dplora/errors.hpp"

namespace dplora {

namespace detail {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const char* what) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) {
    throw ParamError(std::string(what) + ": 64-bit overflow");
  }
  return out;
}

inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b, const char* what) {
  std::uint64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) {
    throw ParamError(std::string(what) + ": 64-bit overflow");
  }
  return out;
}

}  // namespace detail

// Transformer-style shape: L blocks, width n, `projections` adapted square
// matrices per block. dense_total optionally carries the full model's
// parameter count for ratio reporting (0 = unknown).
struct ModelShape {
  std::uint64_t layers = 0;
  std::uint64_t width = 0;
  std::uint64_t projections = 3;
  std::uint64_t dense_total = 0;

  void validate() const {
    if (layers == 0 || width == 0 || projections == 0) {
      throw ParamError("ModelShape: layers, width, projections must be positive");
    }
  }
};

struct AttentionParams {
  std::uint64_t per_block = 0;  // width^2 * projections
  std::uint64_t total = 0;      // layers * per_block
};

// Parameter count of the adapted attention region: per block n^2 per
// projection matrix, summed over blocks. Pure integer arithmetic.
inline AttentionParams attention_param_count(const ModelShape& shape) {
  shape.validate();
  AttentionParams out;
  out.per_block = detail::checked_mul(
      detail::checked_mul(shape.width, shape.width, "attention_param_count"),
      shape.projections, "attention_param_count");
  out.total = detail::checked_mul(out.per_block, shape.layers, "attention_param_count");
  return out;
}

// Adapter parameters transmitted over a whole run and per node-round, against
// the dense alternative of shipping each adapted square matrix whole.
struct OverheadReport {
  std::uint64_t per_round_per_node = 0;  // layers * rank * 2 * width
  std::uint64_t total = 0;               // rounds * nodes * per_round_per_node
  std::uint64_t baseline_per_matrix = 0; // width^2
  std::uint64_t baseline_total = 0;      // rounds * nodes * layers * width^2
  double ratio = 0.0;                    // total / baseline_total = 2r/n
};

inline OverheadReport lora_overhead(std::uint64_t rounds, std::uint64_t nodes,
                                    std::uint64_t layers, std::uint64_t rank,
                                    std::uint64_t width) {
  if (rounds == 0 || nodes == 0 || layers == 0 || rank == 0 || width == 0) {
    throw ParamError("lora_overhead: all arguments must be positive");
  }
  OverheadReport r;
  const std::uint64_t per_matrix_pair =
      detail::checked_mul(detail::checked_mul(rank, width, "lora_overhead"),
                          std::uint64_t{2}, "lora_overhead");
  r.per_round_per_node = detail::checked_mul(layers, per_matrix_pair, "lora_overhead");
  r.total = detail::checked_mul(detail::checked_mul(rounds, nodes, "lora_overhead"),
                                r.per_round_per_node, "lora_overhead");
  r.baseline_per_matrix = detail::checked_mul(width, width, "lora_overhead");
  r.baseline_total = detail::checked_mul(
      detail::checked_mul(detail::checked_mul(rounds, nodes, "lora_overhead"), layers,
                          "lora_overhead"),
      r.baseline_per_matrix, "lora_overhead");
  r.ratio = static_cast<double>(r.total) / static_cast<double>(r.baseline_total);
  return r;
}

// Transmitted-parameter share of the dense model, as a percentage.
inline double reduction_ratio(std::uint64_t adapted, std::uint64_t dense_total) {
  if (adapted == 0 || dense_total == 0 || adapted > dense_total) {
    throw ParamError("reduction_ratio: requires 0 < adapted <= dense_total");
  }
  return 100.0 * static_cast<double>(adapted) / static_cast<double>(dense_total);
}

// Trainable parameters of the dense simulator model: per layer a square
// weight matrix plus a bias vector.
inline std::uint64_t dense_trainable_count(std::uint64_t layers, std::uint64_t width) {
  if (layers == 0 || width == 0) {
    throw ParamError("dense_trainable_count: arguments must be positive");
  }
  const std::uint64_t per_layer = detail::checked_add(
      detail::checked_mul(width, width, "dense_trainable_count"), width,
      "dense_trainable_count");
  return detail::checked_mul(layers, per_layer, "dense_trainable_count");
}

// Wire size of a parameter block; the arithmetic upstream counts parameters
// only, so the element width enters exactly once, here.
inline std::uint64_t bytes_on_wire(std::uint64_t params, std::uint64_t bytes_per_element) {
  if (bytes_per_element != 4 && bytes_per_element != 8) {
    throw ParamError("bytes_on_wire: bytes_per_element must be 4 or 8");
  }
  return detail::checked_mul(params, bytes_per_element, "bytes_on_wire");
}

}  // namespace dplora
