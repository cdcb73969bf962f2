#pragma once

// Dense row-major tensors (scalars are 1x1, column vectors are n x 1) plus the
// elementwise / linear-algebra kernels shared by the gradient tape and the
// plain evaluation paths. Keeping both paths on the same kernels makes values
// bit-identical regardless of how they were computed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace adpo {

struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw std::invalid_argument("Tensor: negative shape");
    v.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  static Tensor column(std::vector<double> data) {
    Tensor t;
    t.rows = static_cast<int>(data.size());
    t.cols = 1;
    t.v = std::move(data);
    return t;
  }

  int size() const { return rows * cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  bool is_vector() const { return cols == 1; }
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

namespace ten {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (int i = 0; i < out.size(); ++i) out.v[i] += b.v[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (int i = 0; i < out.size(); ++i) out.v[i] -= b.v[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (int i = 0; i < out.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

inline Tensor matvec(const Tensor& m, const Tensor& x) {
  if (!x.is_vector() || m.cols != x.rows)
    throw std::invalid_argument("matvec: shape mismatch " + m.shape_str() + " vs " +
                                x.shape_str());
  Tensor out(m.rows, 1);
  for (int i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) acc += m.at(i, j) * x.v[j];
    out.v[i] = acc;
  }
  return out;
}

inline Tensor tanh_ew(const Tensor& a) {
  Tensor out = a;
  for (double& x : out.v) x = std::tanh(x);
  return out;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid_ew(const Tensor& a) {
  Tensor out = a;
  for (double& x : out.v) x = sigmoid_scalar(x);
  return out;
}

// log(1 + e^x) without overflow for large |x|.
inline double softplus_scalar(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline Tensor softplus_ew(const Tensor& a) {
  Tensor out = a;
  for (double& x : out.v) x = softplus_scalar(x);
  return out;
}

// Max-subtracted log-softmax over a column vector.
inline Tensor log_softmax(const Tensor& x) {
  if (!x.is_vector() || x.rows == 0)
    throw std::invalid_argument("log_softmax: expected nonempty vector, got " + x.shape_str());
  double mx = *std::max_element(x.v.begin(), x.v.end());
  double lse = 0.0;
  for (double e : x.v) lse += std::exp(e - mx);
  lse = mx + std::log(lse);
  Tensor out = x;
  for (double& e : out.v) e -= lse;
  return out;
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.v) acc += x;
  return Tensor::scalar(acc);
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return Tensor::scalar(sum(a).v[0] / a.size());
}

// Column-wise mean, i.e. the average of the row vectors.
inline Tensor mean_rows(const Tensor& a) {
  if (a.rows == 0) throw std::invalid_argument("mean_rows: zero rows");
  Tensor out(a.cols, 1);
  for (int j = 0; j < a.cols; ++j) {
    double acc = 0.0;
    for (int i = 0; i < a.rows; ++i) acc += a.at(i, j);
    out.v[j] = acc / a.rows;
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& x : out.v) x *= c;
  return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rows > 0 && b.rows > 0 && a.cols != b.cols)
    throw std::invalid_argument("concat_rows: column mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  int cols = a.rows > 0 ? a.cols : b.cols;
  Tensor out(a.rows + b.rows, cols);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

inline Tensor gather_rows(const Tensor& m, const std::vector<int>& ids) {
  Tensor out(static_cast<int>(ids.size()), m.cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    int src = ids[r];
    if (src < 0 || src >= m.rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(src) +
                                  " out of range for " + m.shape_str());
    for (int j = 0; j < m.cols; ++j) out.at(static_cast<int>(r), j) = m.at(src, j);
  }
  return out;
}

inline Tensor pick(const Tensor& x, int i) {
  if (!x.is_vector())
    throw std::invalid_argument("pick: expected vector, got " + x.shape_str());
  if (i < 0 || i >= x.rows)
    throw std::invalid_argument("pick: index " + std::to_string(i) + " out of range for " +
                                x.shape_str());
  return Tensor::scalar(x.v[i]);
}

inline Tensor reshape(const Tensor& a, int r, int c) {
  if (r * c != a.size())
    throw std::invalid_argument("reshape: size mismatch " + a.shape_str() + " -> " +
                                std::to_string(r) + "x" + std::to_string(c));
  Tensor out = a;
  out.rows = r;
  out.cols = c;
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) acc += a.v[i] * b.v[i];
  return acc;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Tensor& a) {
  double mx = 0.0;
  for (double x : a.v) mx = std::max(mx, std::abs(x));
  return mx;
}

}  // namespace ten
}  // namespace adpo
