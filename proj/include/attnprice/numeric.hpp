#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnprice/error.hpp"

namespace attnprice {

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

// Non-owning row-major views. Parameter blocks and Matrix both hand these out
// so the kernels below never care who owns the storage.
struct ConstView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::size_t size() const { return rows * cols; }
};

struct MutView {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::span<double> flat() const { return {data, rows * cols}; }
  std::size_t size() const { return rows * cols; }
  operator ConstView() const { return {data, rows, cols}; }
};

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() == 0 ? 0 : rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw std::invalid_argument("Matrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
      ++r;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  MutView view() { return {data_.data(), rows_, cols_}; }
  ConstView view() const { return {data_.data(), rows_, cols_}; }
  ConstView cview() const { return view(); }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  // Rows [first, first + count).
  Matrix slice_rows(std::size_t first, std::size_t count) const {
    Matrix out(count, cols_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_), count * cols_, out.data_.begin());
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---- kernels --------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += A x
inline void matvec_add(ConstView a, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* row = a.data + r * a.cols;
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

// y += A^T x
inline void matvec_t_add(ConstView a, std::span<const double> x, std::span<double> y) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* row = a.data + r * a.cols;
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < a.cols; ++c) y[c] += row[c] * xr;
  }
}

// A += scale * u v^T
inline void outer_add(MutView a, std::span<const double> u, std::span<const double> v, double scale = 1.0) {
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double ur = scale * u[r];
    if (ur == 0.0) continue;
    double* row = a.data + r * a.cols;
    for (std::size_t c = 0; c < a.cols; ++c) row[c] += ur * v[c];
  }
}

// Row-wise product: out(t, :) = A x_t for every row x_t of X.
inline Matrix project_rows(ConstView a, const Matrix& x) {
  Matrix out(x.rows(), a.rows);
  for (std::size_t t = 0; t < x.rows(); ++t) matvec_add(a, x.row(t), out.row(t));
  return out;
}

// ---- activations ----------------------------------------------------------

enum class Activation { Tanh, Sigmoid, Relu, Linear };

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Relu: return relu(x);
    case Activation::Linear: return x;
  }
  return x;
}

// Derivative expressed through the activation's output y = activate(kind, x).
// ReLU uses the subgradient 0 at the kink.
inline double activation_grad_from_output(Activation kind, double y) {
  switch (kind) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
    case Activation::Linear: return 1.0;
  }
  return 1.0;
}

inline Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "relu") return Activation::Relu;
  if (name == "linear") return Activation::Linear;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
    case Activation::Linear: return "linear";
  }
  return "?";
}

// ---- softmax --------------------------------------------------------------

// In-place softmax over `scores`; entries equal to kMasked come out exactly 0.
// Max-subtracted for stability.
inline void masked_softmax_inplace(std::span<double> scores) {
  double mx = kMasked;
  for (double s : scores) mx = std::max(mx, s);
  if (mx == kMasked) throw NumericError("masked_softmax: every slot is masked");
  double total = 0.0;
  for (double& s : scores) {
    s = (s == kMasked) ? 0.0 : std::exp(s - mx);
    total += s;
  }
  for (double& s : scores) s /= total;
}

inline std::vector<double> masked_softmax(std::span<const double> scores) {
  std::vector<double> w(scores.begin(), scores.end());
  masked_softmax_inplace(w);
  return w;
}

// ---- RNG ------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Combine a base seed with a stream tag into an independent child seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
}

// Counter-based generator: draw k is splitmix64 of (seed, k), so a stream is
// a pure function of its seed and draw count on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() { return splitmix64(seed_ + 0x9E3779B97F4A7C15ULL * (++counter_)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  // Box-Muller; discards the sine branch so every call consumes two draws.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); fan_in = cols, fan_out = rows.
inline void glorot_uniform(MutView w, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
  for (double& x : w.flat()) x = rng.uniform(-a, a);
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1 divisor).
inline double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace attnprice
