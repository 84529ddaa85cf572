#pragma once

#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dplora/errors.hpp"

namespace dplora {

// Dense 2-D real matrix, row-major, value semantics. The default element
// type is double; float is an opt-in training mode and is excluded from
// the oracle tests.
template <std::floating_point T = double>
class Mat {
 public:
  Mat() = default;

  Mat(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Mat(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) {
        throw ShapeError("Mat: ragged initializer list");
      }
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  T operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  T& at(std::size_t i, std::size_t j) {
    check_index(i, j);
    return data_[i * cols_ + j];
  }
  T at(std::size_t i, std::size_t j) const {
    check_index(i, j);
    return data_[i * cols_ + j];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool operator==(const Mat& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << rows_ << "x" << cols_;
    return os.str();
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

 private:
  void check_index(std::size_t i, std::size_t j) const {
    if (i >= rows_ || j >= cols_) {
      throw ShapeError("Mat::at: index out of range for " + shape_str());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = Mat<double>;

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// C = A * B. Per-entry accumulation runs over k ascending, so the result is
// bit-identical to a naive triple loop.
template <std::floating_point T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  detail::require(a.cols() == b.rows(),
                  "matmul: " + a.shape_str() + " * " + b.shape_str());
  Mat<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        c(i, j) += aik * b(k, j);
      }
    }
  }
  return c;
}

template <std::floating_point T>
Mat<T> transpose(const Mat<T>& m) {
  Mat<T> t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

template <std::floating_point T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b) {
  detail::require(a.same_shape(b), "add: " + a.shape_str() + " vs " + b.shape_str());
  Mat<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

template <std::floating_point T>
Mat<T> sub(const Mat<T>& a, const Mat<T>& b) {
  detail::require(a.same_shape(b), "sub: " + a.shape_str() + " vs " + b.shape_str());
  Mat<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

template <std::floating_point T>
Mat<T> scale(const Mat<T>& m, T c) {
  Mat<T> out = m;
  for (auto& v : out.data()) v *= c;
  return out;
}

// a += c * b, in place.
template <std::floating_point T>
void axpy(Mat<T>& a, T c, const Mat<T>& b) {
  detail::require(a.same_shape(b), "axpy: " + a.shape_str() + " vs " + b.shape_str());
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += c * b.data()[i];
}

template <std::floating_point T>
Mat<T> hadamard(const Mat<T>& a, const Mat<T>& b) {
  detail::require(a.same_shape(b), "hadamard: " + a.shape_str() + " vs " + b.shape_str());
  Mat<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

// 2-norm of the flattened matrix.
template <std::floating_point T>
T frobenius_norm(const Mat<T>& m) {
  T acc{0};
  for (T v : m.data()) acc += v * v;
  return std::sqrt(acc);
}

template <std::floating_point T>
T max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
  detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

template <std::floating_point T>
bool all_finite(const Mat<T>& m) {
  for (T v : m.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// Sum over columns: (n x B) -> (n x 1).
template <std::floating_point T>
Mat<T> sum_cols(const Mat<T>& m) {
  Mat<T> out(m.rows(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    T acc{0};
    for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j);
    out(i, 0) = acc;
  }
  return out;
}

// Adds a column vector to every column of m.
template <std::floating_point T>
Mat<T> add_col_broadcast(const Mat<T>& m, const Mat<T>& col) {
  detail::require(col.rows() == m.rows() && col.cols() == 1,
                  "add_col_broadcast: bias must be " + std::to_string(m.rows()) + "x1");
  Mat<T> out = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) += col(i, 0);
  return out;
}

// --- wire format -----------------------------------------------------------
// Two little-endian u64 dims followed by row-major little-endian f64 entries.
// Float matrices are widened to f64 on write so the on-disk format is fixed.

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw IoError("matrix read: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64_le(std::ostream& os, double v) {
  put_u64_le(os, std::bit_cast<std::uint64_t>(v));
}

inline double get_f64_le(std::istream& is) {
  return std::bit_cast<double>(get_u64_le(is));
}

}  // namespace detail

template <std::floating_point T>
void write_matrix(std::ostream& os, const Mat<T>& m) {
  detail::put_u64_le(os, m.rows());
  detail::put_u64_le(os, m.cols());
  for (T v : m.data()) detail::put_f64_le(os, static_cast<double>(v));
  if (!os) throw IoError("matrix write failed");
}

template <std::floating_point T = double>
Mat<T> read_matrix(std::istream& is) {
  const std::uint64_t rows = detail::get_u64_le(is);
  const std::uint64_t cols = detail::get_u64_le(is);
  Mat<T> m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (auto& v : m.data()) v = static_cast<T>(detail::get_f64_le(is));
  if (!is) throw IoError("matrix read: truncated data");
  return m;
}

}  // namespace dplora
