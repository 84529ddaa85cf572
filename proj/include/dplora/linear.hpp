#pragma once

#include "dplora/matrix.hpp"

namespace dplora {

// Batched affine map. Columns of x are samples: y = w * x + b per column.
template <std::floating_point T>
Mat<T> linear_forward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  return add_col_broadcast(matmul(w, x), b);
}

template <std::floating_point T>
struct LinearGrads {
  Mat<T> grad_w;
  Mat<T> grad_b;
  Mat<T> grad_x;
};

// Analytic gradients of the affine map:
//   grad_w = grad_out * x^T, grad_b = grad_out summed over the batch,
//   grad_x = w^T * grad_out.
template <std::floating_point T>
LinearGrads<T> linear_backward(const Mat<T>& grad_out, const Mat<T>& x,
                               const Mat<T>& w) {
  detail::require(grad_out.rows() == w.rows() && x.rows() == w.cols() &&
                      grad_out.cols() == x.cols(),
                  "linear_backward: grad_out " + grad_out.shape_str() + ", x " +
                      x.shape_str() + ", w " + w.shape_str());
  return LinearGrads<T>{matmul(grad_out, transpose(x)), sum_cols(grad_out),
                        matmul(transpose(w), grad_out)};
}

template <std::floating_point T>
Mat<T> tanh_activate(const Mat<T>& z) {
  Mat<T> out = z;
  for (auto& v : out.data()) v = std::tanh(v);
  return out;
}

// Derivative through tanh expressed in terms of the activated value a:
// tanh'(z) = 1 - a^2.
template <std::floating_point T>
Mat<T> tanh_backward(const Mat<T>& grad_out, const Mat<T>& activated) {
  detail::require(grad_out.same_shape(activated), "tanh_backward: shape mismatch");
  Mat<T> out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T a = activated.data()[i];
    out.data()[i] *= (T{1} - a * a);
  }
  return out;
}

}  // namespace dplora
