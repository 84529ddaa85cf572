#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dplora/errors.hpp"
#include "dplora/matrix.hpp"
#include "dplora/rng.hpp"

namespace dplora {

// Labeled point cloud; columns of `features` are samples.
struct Dataset {
  Matrix features;  // dim x size
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;

  std::size_t dim() const { return features.rows(); }
  std::size_t size() const { return features.cols(); }

  void validate() const {
    if (labels.size() != size()) throw ShapeError("Dataset: label count != sample count");
    if (num_classes == 0) throw ParamError("Dataset: num_classes must be positive");
    if (!all_finite(features)) throw ParamError("Dataset: non-finite feature");
    for (auto y : labels) {
      if (y >= num_classes) throw ParamError("Dataset: label out of range");
    }
  }

  // Gather the given sample indices into a batch matrix + label vector.
  std::pair<Matrix, std::vector<std::uint32_t>> gather(
      const std::vector<std::size_t>& idx) const {
    Matrix x(dim(), idx.size());
    std::vector<std::uint32_t> y(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] >= size()) throw ParamError("Dataset::gather: index out of range");
      for (std::size_t i = 0; i < dim(); ++i) x(i, j) = features(i, idx[j]);
      y[j] = labels[idx[j]];
    }
    return {std::move(x), std::move(y)};
  }
};

// Gaussian class clusters with unit within-cluster std. Class centers are
// mutually orthogonal directions scaled by `margin`, so separation is
// controlled by a single dial. Labels are uniform draws; label == cluster id.
inline Dataset make_synthetic(std::uint64_t seed, std::size_t n_samples,
                              std::size_t dim, std::size_t num_classes,
                              double margin) {
  if (n_samples == 0 || dim == 0 || num_classes == 0) {
    throw ParamError("make_synthetic: sizes must be positive");
  }
  if (num_classes > dim) {
    throw ParamError("make_synthetic: num_classes must be <= dim for orthogonal centers");
  }
  if (!(margin >= 0.0) || !std::isfinite(margin)) {
    throw ParamError("make_synthetic: margin must be finite and nonnegative");
  }
  Rng rng = Rng::substream(seed, StreamDomain::kDataset);

  // Orthonormal centers via Gram-Schmidt on Gaussian draws; near-dependent
  // draws are rejected and redrawn.
  std::vector<std::vector<double>> centers;
  centers.reserve(num_classes);
  while (centers.size() < num_classes) {
    std::vector<double> v(dim);
    for (auto& e : v) e = rng.next_gaussian();
    for (const auto& c : centers) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * c[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * c[i];
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-9) continue;
    for (auto& e : v) e /= norm;
    centers.push_back(std::move(v));
  }

  Dataset data;
  data.features = Matrix(dim, n_samples);
  data.labels.resize(n_samples);
  data.num_classes = num_classes;
  for (std::size_t j = 0; j < n_samples; ++j) {
    const auto label = static_cast<std::uint32_t>(rng.next_below(num_classes));
    data.labels[j] = label;
    const auto& c = centers[label];
    for (std::size_t i = 0; i < dim; ++i) {
      data.features(i, j) = margin * c[i] + rng.next_gaussian();
    }
  }
  data.validate();
  return data;
}

enum class PartitionMode { kEven, kDirichlet };

// Disjoint index shards covering [0, N); shard k's aggregation weight is
// size_k / N.
struct Partition {
  std::vector<std::vector<std::size_t>> shards;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
  }

  std::vector<double> weights() const {
    const auto n = static_cast<double>(total());
    std::vector<double> w;
    w.reserve(shards.size());
    for (const auto& s : shards) w.push_back(static_cast<double>(s.size()) / n);
    return w;
  }
};

namespace detail {

// Marsaglia-Tsang Gamma(alpha, 1); alpha < 1 handled by the boost identity
// Gamma(a) = Gamma(a + 1) * U^(1/a).
inline double gamma_draw(Rng& rng, double alpha) {
  if (!(alpha > 0.0)) throw ParamError("gamma_draw: alpha must be positive");
  if (alpha < 1.0) {
    const double u = rng.next_uniform_pos();
    return gamma_draw(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.next_gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.next_uniform_pos();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

}  // namespace detail

// Split a dataset's indices into k shards. Both modes shuffle with a seeded
// substream first, then cut contiguous blocks: equal-size blocks (±1) in even
// mode, Dirichlet(alpha)-proportioned blocks (each >= 1 sample) otherwise.
inline Partition make_partition(const Dataset& data, std::size_t k, PartitionMode mode,
                                std::uint64_t seed, double alpha = 1.0) {
  const std::size_t n = data.size();
  if (k == 0) throw ParamError("make_partition: k must be positive");
  if (k > n) {
    throw ParamError("make_partition: k = " + std::to_string(k) + " exceeds N = " +
                     std::to_string(n));
  }
  Rng rng = Rng::substream(seed, StreamDomain::kPartition);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
  }

  std::vector<std::size_t> sizes(k);
  if (mode == PartitionMode::kEven) {
    for (std::size_t s = 0; s < k; ++s) sizes[s] = n / k + (s < n % k ? 1 : 0);
  } else {
    if (!(alpha > 0.0)) throw ParamError("make_partition: dirichlet alpha must be positive");
    std::vector<double> p(k);
    double sum = 0.0;
    for (auto& v : p) {
      v = detail::gamma_draw(rng, alpha);
      sum += v;
    }
    // Guarantee one sample per shard, then split the remainder by largest
    // remainder of the Dirichlet proportions.
    const std::size_t spare = n - k;
    std::vector<double> want(k);
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < k; ++s) {
      want[s] = (p[s] / sum) * static_cast<double>(spare);
      sizes[s] = 1 + static_cast<std::size_t>(std::floor(want[s]));
      assigned += sizes[s] - 1;
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double ra = want[a] - std::floor(want[a]);
      const double rb = want[b] - std::floor(want[b]);
      return ra != rb ? ra > rb : a < b;
    });
    for (std::size_t i = 0; assigned < spare; ++i, ++assigned) sizes[order[i % k]]++;
  }

  Partition part;
  part.shards.resize(k);
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < k; ++s) {
    part.shards[s].assign(idx.begin() + static_cast<std::ptrdiff_t>(cursor),
                          idx.begin() + static_cast<std::ptrdiff_t>(cursor + sizes[s]));
    cursor += sizes[s];
  }
  if (cursor != n) throw ProtocolError("make_partition: shard sizes do not cover N");
  return part;
}

// --- dataset dump format -------------------------------------------------------
// Header: three little-endian u64 fields (N, d, num_classes), then the feature
// matrix in the numerics wire format, then N little-endian u32 labels.

inline void save_dataset(std::ostream& os, const Dataset& data) {
  data.validate();
  detail::put_u64_le(os, data.size());
  detail::put_u64_le(os, data.dim());
  detail::put_u64_le(os, data.num_classes);
  write_matrix(os, data.features);
  for (auto y : data.labels) {
    for (int byte = 0; byte < 4; ++byte) {
      os.put(static_cast<char>((y >> (8 * byte)) & 0xFF));
    }
  }
  if (!os) throw IoError("save_dataset: write failed");
}

inline void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_dataset: cannot open " + path);
  save_dataset(os, data);
}

inline Dataset load_dataset(std::istream& is) {
  const std::uint64_t n = detail::get_u64_le(is);
  const std::uint64_t d = detail::get_u64_le(is);
  const std::uint64_t classes = detail::get_u64_le(is);
  if (!is) throw IoError("load_dataset: truncated header");
  Dataset data;
  data.num_classes = classes;
  data.features = read_matrix<double>(is);
  if (data.features.rows() != d || data.features.cols() != n) {
    throw IoError("load_dataset: feature matrix disagrees with header");
  }
  data.labels.resize(n);
  for (auto& y : data.labels) {
    std::uint32_t v = 0;
    for (int byte = 0; byte < 4; ++byte) {
      const int ch = is.get();
      if (ch == std::char_traits<char>::eof()) throw IoError("load_dataset: truncated labels");
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(ch)) << (8 * byte);
    }
    y = v;
  }
  data.validate();
  return data;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_dataset: cannot open " + path);
  return load_dataset(is);
}

}  // namespace dplora
