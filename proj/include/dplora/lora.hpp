#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dplora/errors.hpp"
#include "dplora/linear.hpp"
#include "dplora/matrix.hpp"
#include "dplora/rng.hpp"

namespace dplora {

namespace detail {

template <std::floating_point T>
Mat<T> scale_grad(Mat<T> m, T scale) {
  if (scale != T{1}) {
    for (auto& v : m.data()) v *= scale;
  }
  return m;
}

}  // namespace detail

// Rank-r decomposition pair attached to a frozen square base matrix.
// a is n x r, b is r x n; the effective weight is base + scale * a * b.
template <std::floating_point T = double>
struct LoraAdapter {
  Mat<T> a;
  Mat<T> b;

  std::size_t n() const { return a.rows(); }
  std::size_t rank() const { return a.cols(); }

  void validate() const {
    if (a.cols() != b.rows() || a.rows() != b.cols()) {
      throw ShapeError("LoraAdapter: a " + a.shape_str() + " incompatible with b " +
                       b.shape_str());
    }
    if (rank() == 0 || rank() > n()) {
      throw ParamError("LoraAdapter: rank must be in [1, n]");
    }
  }
};

template <std::floating_point T = double>
struct LoraLayer {
  Mat<T> base;           // frozen; never touched by adapter training
  LoraAdapter<T> adapter;
  Mat<T> bias;           // n x 1; frozen in adapter mode, trained in dense mode
};

// Pre-activation output of one layer: (base + scale * a * b) * x + bias.
// Computed as base*x + scale*a*(b*x) + bias, so the rank-r product is never
// densified.
template <std::floating_point T>
Mat<T> lora_affine(const Mat<T>& x, const LoraLayer<T>& layer, T scale = T{1}) {
  Mat<T> z = linear_forward(x, layer.base, layer.bias);
  const Mat<T> low = matmul(layer.adapter.b, x);
  axpy(z, scale, matmul(layer.adapter.a, low));
  return z;
}

// Hidden-layer forward: affine followed by the elementwise nonlinearity.
template <std::floating_point T>
Mat<T> lora_forward(const Mat<T>& x, const LoraLayer<T>& layer, T scale = T{1}) {
  return tanh_activate(lora_affine(x, layer, scale));
}

template <std::floating_point T = double>
struct AdapterGrads {
  Mat<T> a;
  Mat<T> b;
};

template <std::floating_point T = double>
struct DenseGrads {
  Mat<T> w;
  Mat<T> bias;
};

// Per-layer gradients for a pre-activation upstream gradient grad_z:
//   g_a = scale * grad_z * (b x)^T,   g_b = scale * (a^T grad_z) * x^T,
//   g_bias = grad_z summed over the batch,
//   g_x = (base + scale a b)^T grad_z.
template <std::floating_point T>
struct LoraLayerGrads {
  Mat<T> a;
  Mat<T> b;
  Mat<T> bias;
  Mat<T> x;
};

template <std::floating_point T>
LoraLayerGrads<T> lora_layer_gradients(const LoraLayer<T>& layer, const Mat<T>& x,
                                       const Mat<T>& grad_z, T scale = T{1}) {
  const Mat<T> low = matmul(layer.adapter.b, x);                 // r x B
  const Mat<T> up = matmul(transpose(layer.adapter.a), grad_z);  // r x B
  Mat<T> grad_x = matmul(transpose(layer.base), grad_z);
  axpy(grad_x, scale, matmul(transpose(layer.adapter.b), up));
  return LoraLayerGrads<T>{detail::scale_grad(matmul(grad_z, transpose(low)), scale),
                           detail::scale_grad(matmul(up, transpose(x)), scale),
                           sum_cols(grad_z), std::move(grad_x)};
}

// Trainable parameter count of the adapter set: layers * 2 * n * r.
inline std::uint64_t lora_param_count(std::uint64_t layers, std::uint64_t width,
                                      std::uint64_t rank) {
  if (layers == 0 || width == 0 || rank == 0) {
    throw ParamError("lora_param_count: all arguments must be positive");
  }
  std::uint64_t per_matrix = 0, per_layer = 0, total = 0;
  if (__builtin_mul_overflow(width, rank, &per_matrix) ||
      __builtin_mul_overflow(per_matrix, std::uint64_t{2}, &per_layer) ||
      __builtin_mul_overflow(per_layer, layers, &total)) {
    throw ParamError("lora_param_count: overflow");
  }
  return total;
}

enum class TrainableSet { kAdapters, kDense };

template <std::floating_point T = double>
struct GradResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<AdapterGrads<T>> adapters;  // filled in kAdapters mode
  std::vector<DenseGrads<T>> dense;       // filled in kDense mode
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Stack of L square LoRA layers with tanh between layers and a
// softmax-cross-entropy head over the first `classes` outputs of the last
// affine. Base matrices and biases stay frozen under adapter training.
template <std::floating_point T = double>
class LoraModel {
 public:
  LoraModel() = default;

  // A ~ N(0, 1/r), B = 0: training starts exactly at the frozen-base function.
  // Bases are N(0, 1/n) so activations stay O(1) at depth.
  static LoraModel init(Rng& rng, std::size_t layers, std::size_t width,
                        std::size_t rank, std::size_t classes, T scale = T{1}) {
    if (layers == 0 || width == 0 || rank == 0 || classes == 0) {
      throw ParamError("LoraModel::init: sizes must be positive");
    }
    if (rank > width) throw ParamError("LoraModel::init: rank must be <= width");
    if (classes > width) throw ParamError("LoraModel::init: classes must be <= width");
    LoraModel m;
    m.classes_ = classes;
    m.scale_ = scale;
    const double base_std = 1.0 / std::sqrt(static_cast<double>(width));
    const double a_std = 1.0 / std::sqrt(static_cast<double>(rank));
    for (std::size_t l = 0; l < layers; ++l) {
      LoraLayer<T> layer;
      layer.base = gaussian_sample<T>(rng, width, width, 0.0, base_std);
      layer.adapter.a = gaussian_sample<T>(rng, width, rank, 0.0, a_std);
      layer.adapter.b = Mat<T>(rank, width);
      layer.bias = Mat<T>(width, 1);
      layer.adapter.validate();
      m.layers_.push_back(std::move(layer));
    }
    return m;
  }

  std::size_t layer_count() const { return layers_.size(); }
  std::size_t width() const { return layers_.empty() ? 0 : layers_[0].base.rows(); }
  std::size_t rank() const { return layers_.empty() ? 0 : layers_[0].adapter.rank(); }
  std::size_t classes() const { return classes_; }
  T adapter_scale() const { return scale_; }

  const std::vector<LoraLayer<T>>& layers() const { return layers_; }
  LoraLayer<T>& layer(std::size_t l) { return layers_.at(l); }

  void set_adapter(std::size_t l, Mat<T> a, Mat<T> b) {
    auto& ad = layers_.at(l).adapter;
    if (!ad.a.same_shape(a) || !ad.b.same_shape(b)) {
      throw ProtocolError("set_adapter: shape mismatch at layer " + std::to_string(l));
    }
    ad.a = std::move(a);
    ad.b = std::move(b);
  }

  void set_dense(std::size_t l, Mat<T> w, Mat<T> bias) {
    auto& layer = layers_.at(l);
    if (!layer.base.same_shape(w) || !layer.bias.same_shape(bias)) {
      throw ProtocolError("set_dense: shape mismatch at layer " + std::to_string(l));
    }
    layer.base = std::move(w);
    layer.bias = std::move(bias);
  }

  // Class logits for a batch (columns are samples).
  Mat<T> forward(const Mat<T>& x) const { return slice_logits(last_affine(x)); }

  EvalResult evaluate(const Mat<T>& x, const std::vector<std::uint32_t>& labels) const {
    check_batch(x, labels);
    return score(forward(x), labels).first;
  }

  GradResult<T> gradients(const Mat<T>& x, const std::vector<std::uint32_t>& labels,
                          TrainableSet mode = TrainableSet::kAdapters) const {
    check_batch(x, labels);
    const std::size_t batch = x.cols();
    const std::size_t n = width();

    // Forward with per-layer caches.
    std::vector<Mat<T>> inputs;
    inputs.reserve(layers_.size());
    std::vector<Mat<T>> activations;  // tanh outputs of hidden layers
    Mat<T> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      inputs.push_back(h);
      Mat<T> z = lora_affine(h, layers_[l], scale_);
      if (l + 1 < layers_.size()) {
        h = tanh_activate(z);
        activations.push_back(h);
      } else {
        h = std::move(z);
      }
    }

    auto [eval, probs] = score(slice_logits(h), labels);

    GradResult<T> result;
    result.loss = eval.loss;
    result.accuracy = eval.accuracy;
    if (mode == TrainableSet::kAdapters) {
      result.adapters.resize(layers_.size());
    } else {
      result.dense.resize(layers_.size());
    }

    // d loss / d logits = (softmax - onehot) / batch, scattered onto the first
    // `classes_` rows of the last pre-activation.
    Mat<T> grad_z(n, batch);
    const T inv_batch = T{1} / static_cast<T>(batch);
    for (std::size_t c = 0; c < classes_; ++c) {
      for (std::size_t j = 0; j < batch; ++j) {
        T g = probs(c, j);
        if (labels[j] == c) g -= T{1};
        grad_z(c, j) = g * inv_batch;
      }
    }

    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& layer = layers_[li];
      const Mat<T>& x_in = inputs[li];
      const Mat<T> up = matmul(transpose(layer.adapter.a), grad_z);  // r x B
      if (mode == TrainableSet::kAdapters) {
        const Mat<T> low = matmul(layer.adapter.b, x_in);  // r x B
        result.adapters[li] =
            AdapterGrads<T>{detail::scale_grad(matmul(grad_z, transpose(low)), scale_),
                            detail::scale_grad(matmul(up, transpose(x_in)), scale_)};
      } else {
        result.dense[li] =
            DenseGrads<T>{matmul(grad_z, transpose(x_in)), sum_cols(grad_z)};
      }
      if (li > 0) {
        Mat<T> grad_x = matmul(transpose(layer.base), grad_z);
        axpy(grad_x, scale_, matmul(transpose(layer.adapter.b), up));
        grad_z = tanh_backward(grad_x, activations[li - 1]);
      }
    }
    return result;
  }

  void apply_adapter_update(const std::vector<AdapterGrads<T>>& grads, T lr) {
    if (grads.size() != layers_.size()) {
      throw ProtocolError("apply_adapter_update: gradient count mismatch");
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      axpy(layers_[l].adapter.a, -lr, grads[l].a);
      axpy(layers_[l].adapter.b, -lr, grads[l].b);
    }
  }

  void apply_dense_update(const std::vector<DenseGrads<T>>& grads, T lr) {
    if (grads.size() != layers_.size()) {
      throw ProtocolError("apply_dense_update: gradient count mismatch");
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      axpy(layers_[l].base, -lr, grads[l].w);
      axpy(layers_[l].bias, -lr, grads[l].bias);
    }
  }

  // FNV-1a over the base matrix bytes; detects any frozen-weight drift.
  std::uint64_t base_hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto feed = [&h](const Mat<T>& m) {
      for (T v : m.data()) {
        const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
        for (int byte = 0; byte < 8; ++byte) {
          h ^= (bits >> (8 * byte)) & 0xFF;
          h *= 0x100000001B3ULL;
        }
      }
    };
    for (const auto& layer : layers_) feed(layer.base);
    return h;
  }

 private:
  Mat<T> last_affine(const Mat<T>& x) const {
    if (layers_.empty()) throw ParamError("LoraModel: no layers");
    if (x.rows() != width()) {
      throw ShapeError("LoraModel: input rows " + std::to_string(x.rows()) +
                       " != width " + std::to_string(width()));
    }
    Mat<T> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat<T> z = lora_affine(h, layers_[l], scale_);
      h = (l + 1 < layers_.size()) ? tanh_activate(z) : std::move(z);
    }
    return h;
  }

  Mat<T> slice_logits(const Mat<T>& z) const {
    Mat<T> logits(classes_, z.cols());
    for (std::size_t c = 0; c < classes_; ++c)
      for (std::size_t j = 0; j < z.cols(); ++j) logits(c, j) = z(c, j);
    return logits;
  }

  void check_batch(const Mat<T>& x, const std::vector<std::uint32_t>& labels) const {
    if (x.cols() == 0) throw ParamError("LoraModel: empty batch");
    if (labels.size() != x.cols()) {
      throw ShapeError("LoraModel: label count != batch size");
    }
    for (auto y : labels) {
      if (y >= classes_) throw ParamError("LoraModel: label out of range");
    }
  }

  // Column-stable softmax plus mean cross-entropy and argmax accuracy.
  std::pair<EvalResult, Mat<T>> score(const Mat<T>& logits,
                                      const std::vector<std::uint32_t>& labels) const {
    const std::size_t batch = logits.cols();
    Mat<T> probs(logits.rows(), batch);
    double loss = 0.0;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < batch; ++j) {
      T max_logit = logits(0, j);
      std::size_t argmax = 0;
      for (std::size_t c = 1; c < logits.rows(); ++c) {
        if (logits(c, j) > max_logit) {
          max_logit = logits(c, j);
          argmax = c;
        }
      }
      T denom{0};
      for (std::size_t c = 0; c < logits.rows(); ++c) {
        const T e = std::exp(logits(c, j) - max_logit);
        probs(c, j) = e;
        denom += e;
      }
      for (std::size_t c = 0; c < logits.rows(); ++c) probs(c, j) /= denom;
      loss -= std::log(static_cast<double>(probs(labels[j], j)));
      hits += (argmax == labels[j]) ? 1 : 0;
    }
    EvalResult eval{loss / static_cast<double>(batch),
                    static_cast<double>(hits) / static_cast<double>(batch)};
    return {eval, std::move(probs)};
  }

  std::vector<LoraLayer<T>> layers_;
  std::size_t classes_ = 0;
  T scale_ = T{1};
};

// --- checkpoint format -------------------------------------------------------
// Header: four little-endian u64 fields (layers, width, rank, seed), then per
// layer the matrices base, a, b, bias in the numerics wire format.

template <std::floating_point T = double>
struct Checkpoint {
  LoraModel<T> model;
  std::uint64_t seed = 0;
};

template <std::floating_point T>
void save_checkpoint(std::ostream& os, const LoraModel<T>& model, std::uint64_t seed) {
  detail::put_u64_le(os, model.layer_count());
  detail::put_u64_le(os, model.width());
  detail::put_u64_le(os, model.rank());
  detail::put_u64_le(os, seed);
  for (const auto& layer : model.layers()) {
    write_matrix(os, layer.base);
    write_matrix(os, layer.adapter.a);
    write_matrix(os, layer.adapter.b);
    write_matrix(os, layer.bias);
  }
  if (!os) throw IoError("save_checkpoint: write failed");
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const LoraModel<T>& model,
                     std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  save_checkpoint(os, model, seed);
}

template <std::floating_point T = double>
Checkpoint<T> load_checkpoint(std::istream& is, std::size_t classes, T scale = T{1}) {
  const std::uint64_t layers = detail::get_u64_le(is);
  const std::uint64_t width = detail::get_u64_le(is);
  const std::uint64_t rank = detail::get_u64_le(is);
  const std::uint64_t seed = detail::get_u64_le(is);
  if (!is) throw IoError("load_checkpoint: truncated header");
  Rng throwaway(0);
  Checkpoint<T> cp;
  cp.seed = seed;
  cp.model = LoraModel<T>::init(throwaway, layers, width, rank,
                                classes == 0 ? width : classes, scale);
  for (std::size_t l = 0; l < layers; ++l) {
    Mat<T> base = read_matrix<T>(is);
    Mat<T> a = read_matrix<T>(is);
    Mat<T> b = read_matrix<T>(is);
    Mat<T> bias = read_matrix<T>(is);
    auto& layer = cp.model.layer(l);
    if (!layer.base.same_shape(base) || !layer.adapter.a.same_shape(a) ||
        !layer.adapter.b.same_shape(b) || !layer.bias.same_shape(bias)) {
      throw IoError("load_checkpoint: matrix shape disagrees with header");
    }
    layer.base = std::move(base);
    layer.adapter.a = std::move(a);
    layer.adapter.b = std::move(b);
    layer.bias = std::move(bias);
  }
  return cp;
}

template <std::floating_point T = double>
Checkpoint<T> load_checkpoint(const std::string& path, std::size_t classes,
                              T scale = T{1}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  return load_checkpoint<T>(is, classes, scale);
}

}  // namespace dplora
