#pragma once

// Dense row-major matrices, activations, batch normalization and a
// central-difference gradient oracle. All reductions accumulate
// sequentially in index order so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssvh/error.hpp"

namespace ssvh {

using Vector = std::vector<double>;

enum class Mode { kTrain, kInfer };

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() ? rows.begin()->size() : 0;
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      require(r.size() == m.cols_, ErrorKind::kShape, "ragged initializer for Matrix");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

// out += a * b
inline void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(),
          ErrorKind::kShape,
          "matmul shape mismatch: " + shape_str(a) + " * " + shape_str(b) + " -> " +
              shape_str(out));
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
}

// out += a^T * b
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
          ErrorKind::kShape,
          "matmul_tn shape mismatch: " + shape_str(a) + "^T * " + shape_str(b) + " -> " +
              shape_str(out));
  const std::size_t n = b.cols();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* br = b.row(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += ari * br[j];
    }
  }
}

// out += a * b^T
inline void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(),
          ErrorKind::kShape,
          "matmul_nt shape mismatch: " + shape_str(a) + " * " + shape_str(b) + "^T -> " +
              shape_str(out));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) += s;
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  matmul_acc(a, b, out);
  return out;
}

// x * W + b, with b broadcast over rows.
inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
  require(x.cols() == w.rows() && b.size() == w.cols(), ErrorKind::kShape,
          "affine shape mismatch: x" + shape_str(x) + " W" + shape_str(w) + " b(" +
              std::to_string(b.size()) + ")");
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) std::copy(b.begin(), b.end(), out.row(i).begin());
  matmul_acc(x, w, out);
  return out;
}

// Column sums accumulated into `acc`.
inline void add_column_sums(const Matrix& m, std::span<double> acc) {
  require(acc.size() == m.cols(), ErrorKind::kShape, "column-sum length mismatch");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) acc[j] += r[j];
  }
}

inline void add_into(Matrix& dst, const Matrix& src) {
  require(dst.same_shape(src), ErrorKind::kShape,
          "add shape mismatch: " + shape_str(dst) + " += " + shape_str(src));
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

enum class Activation { kSigmoid, kTanh };

inline Matrix activate(const Matrix& x, Activation kind) {
  Matrix out = x;
  for (double& v : out.values()) v = kind == Activation::kSigmoid ? sigmoid(v) : std::tanh(v);
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormState identity(std::size_t dim) {
    return {Vector(dim, 1.0), Vector(dim, 0.0), Vector(dim, 0.0), Vector(dim, 1.0)};
  }
  std::size_t dim() const noexcept { return gamma.size(); }
};

// What the backward pass needs from a forward normalization.
struct BatchNormCache {
  Matrix xhat;
  Vector inv_std;
  Mode mode = Mode::kTrain;
};

struct BatchNormResult {
  Matrix y;
  BatchNormState state;
  BatchNormCache cache;
};

inline BatchNormResult batch_norm(const Matrix& x, const BatchNormState& state, Mode mode) {
  const std::size_t d = state.dim();
  require(x.cols() == d && state.beta.size() == d && state.running_mean.size() == d &&
              state.running_var.size() == d,
          ErrorKind::kShape,
          "batch_norm: input " + shape_str(x) + " vs state dim " + std::to_string(d));
  require(state.epsilon > 0.0, ErrorKind::kUsage, "batch_norm: epsilon must be positive");
  const std::size_t n = x.rows();

  BatchNormResult res{Matrix(n, d), state, {Matrix(n, d), Vector(d), mode}};
  Vector mean(d, 0.0), var(d, 0.0);
  if (mode == Mode::kTrain) {
    require(n >= 2, ErrorKind::kUsage, "batch_norm: train mode needs at least 2 rows");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x(i, j) - mean[j];
        var[j] += c * c;
      }
    for (double& v : var) v /= static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
      res.state.running_mean[j] =
          state.momentum * state.running_mean[j] + (1.0 - state.momentum) * mean[j];
      res.state.running_var[j] =
          state.momentum * state.running_var[j] + (1.0 - state.momentum) * var[j];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  for (std::size_t j = 0; j < d; ++j) res.cache.inv_std[j] = 1.0 / std::sqrt(var[j] + state.epsilon);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mean[j]) * res.cache.inv_std[j];
      res.cache.xhat(i, j) = xh;
      res.y(i, j) = state.gamma[j] * xh + state.beta[j];
    }
  return res;
}

// Returns dL/dx and accumulates dL/dgamma, dL/dbeta.
inline Matrix batch_norm_backward(const Matrix& dy, const BatchNormCache& cache,
                                  std::span<const double> gamma, std::span<double> dgamma,
                                  std::span<double> dbeta) {
  const std::size_t n = dy.rows();
  const std::size_t d = dy.cols();
  require(cache.xhat.same_shape(dy) && gamma.size() == d && dgamma.size() == d &&
              dbeta.size() == d,
          ErrorKind::kShape, "batch_norm_backward: shape mismatch " + shape_str(dy));
  Matrix dx(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dgamma[j] += dy(i, j) * cache.xhat(i, j);
      dbeta[j] += dy(i, j);
      const double dxh = dy(i, j) * gamma[j];
      sum_dxh += dxh;
      sum_dxh_xh += dxh * cache.xhat(i, j);
    }
    if (cache.mode == Mode::kTrain) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double dxh = dy(i, j) * gamma[j];
        dx(i, j) = cache.inv_std[j] * inv_n *
                   (static_cast<double>(n) * dxh - sum_dxh - cache.xhat(i, j) * sum_dxh_xh);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) dx(i, j) = dy(i, j) * gamma[j] * cache.inv_std[j];
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Central-difference gradient oracle.

inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                               double eps) {
  require(eps > 0.0, ErrorKind::kUsage, "finite_diff_grad: eps must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + eps;
    const double up = f(probe);
    probe[k] = x[k] - eps;
    const double down = f(probe);
    probe[k] = x[k];
    require(std::isfinite(up) && std::isfinite(down), ErrorKind::kNumeric,
            "finite_diff_grad: non-finite function value at coordinate " + std::to_string(k));
    grad[k] = (up - down) / (2.0 * eps);
  }
  return grad;
}

}  // namespace ssvh
