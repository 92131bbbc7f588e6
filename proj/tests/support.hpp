#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "attnprice/attnprice.hpp"

namespace attnprice::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = scale * rng.normal();
  return m;
}

inline void randomize(ParameterSet& ps, Rng& rng, double scale = 0.5) {
  for (double& v : ps.flat()) v = scale * rng.normal();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- attention oracle -----------------------------------------------------

inline std::vector<double> mat_vec(ConstView a, std::span<const double> x) {
  std::vector<double> y(a.rows, 0.0);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) y[r] += a(r, c) * x[c];
  return y;
}

struct OracleAttention {
  Matrix weights;
  Matrix z;
};

// Direct evaluation from the score definitions with plain exponentiation.
inline OracleAttention oracle_attention(AttentionKind kind, const ParameterSet& ps, const Matrix& h,
                                        std::size_t window) {
  const std::size_t T = h.rows(), d = h.cols();
  const double root_d = std::sqrt(static_cast<double>(d));
  auto block = [&](const char* name) { return ps.view(ps.find(name)); };
  auto score = [&](std::size_t t, std::size_t j) {
    double e = 0.0;
    switch (kind) {
      case AttentionKind::Batt: {
        auto q = mat_vec(block("W_q"), h.row(t)), k = mat_vec(block("W_k"), h.row(j));
        auto v = block("v");
        for (std::size_t c = 0; c < d; ++c) e += v.data[c] * std::tanh(q[c] + k[c]);
        return e;
      }
      case AttentionKind::LD:
        for (std::size_t c = 0; c < d; ++c) e += h(t, c) * h(j, c);
        return e / root_d;
      case AttentionKind::LG: {
        auto g = mat_vec(block("W"), h.row(j));
        for (std::size_t c = 0; c < d; ++c) e += h(t, c) * g[c];
        return e / root_d;
      }
      case AttentionKind::LC: {
        auto q = mat_vec(block("W_q"), h.row(t)), k = mat_vec(block("W_k"), h.row(j));
        auto v = block("v");
        for (std::size_t c = 0; c < d; ++c) e += v.data[c] * std::tanh(q[c]) + v.data[d + c] * std::tanh(k[c]);
        return e;
      }
      case AttentionKind::SelfAtt:
      case AttentionKind::SparseAtt: {
        auto q = mat_vec(block("W_q"), h.row(t)), k = mat_vec(block("W_k"), h.row(j));
        for (std::size_t c = 0; c < d; ++c) e += q[c] * k[c];
        return e / root_d;
      }
    }
    return e;
  };
  const bool projected = kind == AttentionKind::SelfAtt || kind == AttentionKind::SparseAtt;
  OracleAttention out{Matrix(T, T), Matrix(T, d)};
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t first = kind == AttentionKind::SparseAtt && t + 1 > window ? t + 1 - window : 0;
    double total = 0.0;
    for (std::size_t j = first; j <= t; ++j) {
      out.weights(t, j) = std::exp(score(t, j));
      total += out.weights(t, j);
    }
    for (std::size_t j = first; j <= t; ++j) {
      out.weights(t, j) /= total;
      const std::vector<double> value =
          projected ? mat_vec(block("W_v"), h.row(j)) : std::vector<double>(h.row(j).begin(), h.row(j).end());
      for (std::size_t c = 0; c < d; ++c) out.z(t, c) += out.weights(t, j) * value[c];
    }
  }
  return out;
}

// ---- gradient instances ---------------------------------------------------

// sum(w .* output) over a random core; returns the max relative error.
inline GradCheckReport core_grad_check(CoreKind kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t T = 2 + rng.uniform_index(5), d_in = 1 + rng.uniform_index(4);
  const std::size_t d1 = 1 + rng.uniform_index(4), d2 = 1 + rng.uniform_index(4);
  ParameterSet ps;
  RecurrentCore core(kind, ps, d_in, d1, d2);
  randomize(ps, rng);
  const Matrix x = random_matrix(T, d_in, rng);
  const Matrix w = random_matrix(T, d2, rng);
  auto loss = [&](std::span<const double> theta) {
    ParameterSet p = ps;
    p.assign(theta);
    const Matrix out = core.forward(p, x);
    return dot(out.flat(), w.flat());
  };
  CoreCache cache;
  core.forward(ps, x, cache);
  ParameterSet grad = ps.zeros_like();
  core.backward(ps, x, cache, w, grad);
  return grad_check(loss, std::vector<double>(ps.flat().begin(), ps.flat().end()), grad.flat(), 1e-4);
}

// sum(w .* z) with respect to the attention parameters and the hidden inputs.
inline GradCheckReport attention_grad_check(AttentionKind kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t T = 2 + rng.uniform_index(5), d = 1 + rng.uniform_index(4), window = 1 + rng.uniform_index(T);
  ParameterSet ps;
  AttentionLayer layer(kind, ps, d, window);
  randomize(ps, rng);
  const Matrix h = random_matrix(T, d, rng);
  const Matrix w = random_matrix(T, d, rng);
  const std::size_t np = ps.size();
  auto loss = [&](std::span<const double> theta) {
    ParameterSet p = ps;
    p.assign(theta.first(np));
    Matrix hh(T, d);
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(np), theta.end(), hh.flat().begin());
    AttentionCache cache;
    layer.forward(p, hh, cache);
    return dot(cache.z.flat(), w.flat());
  };
  AttentionCache cache;
  layer.forward(ps, h, cache);
  ParameterSet grad = ps.zeros_like();
  const Matrix dh = layer.backward(ps, h, cache, w, grad);
  std::vector<double> theta(ps.flat().begin(), ps.flat().end()), analytic(grad.flat().begin(), grad.flat().end());
  theta.insert(theta.end(), h.flat().begin(), h.flat().end());
  analytic.insert(analytic.end(), dh.flat().begin(), dh.flat().end());
  return grad_check(loss, theta, analytic, 1e-4);
}

// Masked reconstruction loss of a random autoencoder on a T x n panel with
// roughly a quarter of the cells masked.
inline GradCheckReport autoencoder_grad_check(std::uint64_t seed, std::size_t T = 5, std::size_t n = 4) {
  Rng rng(seed);
  Autoencoder ae = Autoencoder::for_inputs(n);
  randomize(ae.params(), rng);
  const Matrix f = random_matrix(T, n, rng);
  std::vector<std::uint8_t> observed(T * n);
  for (auto& o : observed) o = rng.uniform() < 0.75;
  std::vector<std::size_t> rows(T);
  for (std::size_t r = 0; r < T; ++r) rows[r] = r;
  auto loss = [&](std::span<const double> theta) {
    Autoencoder a = ae;
    a.params().assign(theta);
    return a.masked_loss(f, observed, rows);
  };
  ParameterSet grad;
  ae.masked_loss_and_grad(f, observed, rows, grad);
  return grad_check(loss, std::vector<double>(ae.params().flat().begin(), ae.params().flat().end()), grad.flat(),
                    1e-4);
}

// Full forecaster with the MSE + L1 objective; parameters within a step of
// the L1 kink at zero are skipped.
inline GradCheckReport composed_grad_check(ModelKind kind, std::uint64_t seed, double lambda = 1e-3) {
  Rng rng(seed);
  ModelSpec spec;
  spec.kind = kind;
  spec.input_width = 1 + rng.uniform_index(4);
  spec.hidden1 = 1 + rng.uniform_index(4);
  spec.hidden2 = 1 + rng.uniform_index(4);
  const std::size_t T = 2 + rng.uniform_index(5);
  spec.window = 1 + rng.uniform_index(T);
  Forecaster model(spec);
  randomize(model.params(), rng);
  const Matrix x = random_matrix(T, spec.input_width, rng);
  std::vector<double> y(T);
  for (double& v : y) v = rng.normal();
  std::vector<std::size_t> rows(T);
  for (std::size_t r = 0; r < T; ++r) rows[r] = r;
  auto loss = [&](std::span<const double> theta) {
    Forecaster m = model;
    m.params().assign(theta);
    return regularized_loss(y, m.predict(x), rows, m.params(), lambda).total;
  };
  ParameterSet grad;
  loss_and_grad(model, x, y, rows, lambda, grad);
  GradCheckOptions opts;
  opts.skip = [](std::size_t, double value, double step) { return std::abs(value) < 2.0 * step; };
  return grad_check(loss, std::vector<double>(model.params().flat().begin(), model.params().flat().end()),
                    grad.flat(), 1e-4, opts);
}

// ---- causality ------------------------------------------------------------

// Perturbs every input row from a random s onward and reports whether any
// prediction before s moved.
inline bool causality_trial(ModelKind kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t T = 2 + rng.uniform_index(23);
  ModelSpec spec;
  spec.kind = kind;
  spec.input_width = 1 + rng.uniform_index(8);
  spec.hidden1 = 1 + rng.uniform_index(8);
  spec.hidden2 = 1 + rng.uniform_index(8);
  spec.window = 1 + rng.uniform_index(8);
  Forecaster model(spec);
  model.initialize(derive_seed(seed, 1));
  randomize(model.params(), rng);
  const Matrix x = random_matrix(T, spec.input_width, rng);
  const std::vector<double> base = model.predict(x);
  const std::size_t s = 1 + rng.uniform_index(T - 1);
  Matrix moved = x;
  for (std::size_t r = s; r < T; ++r)
    for (double& v : moved.row(r)) v += 3.0 * rng.normal();
  const std::vector<double> after = model.predict(moved);
  for (std::size_t t = 0; t < s; ++t)
    if (after[t] != base[t]) return false;
  return true;
}

// ---- backtest oracle ------------------------------------------------------

struct OracleBacktest {
  std::vector<double> portfolio;
  double ann_return = 0.0;
  double sharpe = 0.0;
  double sortino = 0.0;
  double mdd = 0.0;
};

// Spreadsheet-style walk: one wealth column per stock, costs applied as
// multiplicative charges on that column, then a cross-sectional average.
inline std::vector<double> oracle_stock_returns(const std::vector<double>& actual, const std::vector<double>& predicted,
                                                double cost_bp) {
  const double fee = cost_bp / 10000.0;
  std::vector<double> net(actual.size(), 0.0);
  bool holding = false;
  std::size_t opened = 0;
  double wealth = 1.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    if (holding) {
      const double before = wealth;
      wealth *= 1.0 + actual[t];
      if (t == opened + 1) wealth -= wealth * fee;
      const bool close = predicted[t] < 0.0 && actual[t] < 0.0;
      if (close) wealth -= wealth * fee;
      net[t] = wealth / before - 1.0;
      if (close) holding = false;
    } else if (predicted[t] > 0.0 && actual[t] > 0.0) {
      holding = true;
      opened = t;
    }
  }
  return net;
}

inline double oracle_mdd(const std::vector<double>& curve) {
  double worst = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i)
    for (std::size_t j = i; j < curve.size(); ++j) worst = std::max(worst, (curve[i] - curve[j]) / curve[i]);
  return worst;
}

inline OracleBacktest oracle_backtest(const std::vector<std::vector<double>>& actual,
                                      const std::vector<std::vector<double>>& predicted,
                                      const std::vector<std::vector<double>>* caps, double cost_bp) {
  const std::size_t N = actual.size(), T = actual[0].size();
  std::vector<std::vector<double>> stock(N);
  for (std::size_t i = 0; i < N; ++i) stock[i] = oracle_stock_returns(actual[i], predicted[i], cost_bp);
  OracleBacktest out;
  out.portfolio.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double w = caps ? (*caps)[i][t] : 1.0;
      num += w * stock[i][t];
      den += w;
    }
    out.portfolio[t] = num / den;
  }
  std::vector<double> curve{1.0};
  double sum = 0.0;
  for (double r : out.portfolio) {
    curve.push_back(curve.back() * (1.0 + r));
    sum += r;
  }
  const double mu = sum / static_cast<double>(T);
  double ss = 0.0, down = 0.0;
  std::size_t ndown = 0;
  for (double r : out.portfolio) {
    ss += (r - mu) * (r - mu);
    if (r < 0.0) {
      down += r * r;
      ++ndown;
    }
  }
  out.ann_return = std::pow(curve.back(), 12.0 / static_cast<double>(T)) - 1.0;
  out.sharpe = mu / std::sqrt(ss / static_cast<double>(T - 1));
  out.sortino = mu / std::sqrt(down / static_cast<double>(ndown));
  out.mdd = oracle_mdd(curve);
  return out;
}

// 3 stocks x 12 months: stock-major realized and predicted returns plus caps.
struct BacktestFixture {
  std::vector<std::vector<double>> actual{
      {0.02, 0.01, -0.03, 0.04, -0.02, -0.01, 0.03, 0.02, -0.04, 0.05, 0.01, -0.02},
      {-0.01, 0.03, 0.02, -0.02, 0.01, 0.04, -0.03, -0.01, 0.02, 0.03, -0.05, 0.02},
      {0.01, -0.02, 0.02, 0.03, -0.01, -0.04, 0.02, 0.05, 0.01, -0.03, -0.02, 0.04}};
  std::vector<std::vector<double>> predicted{
      {0.01, 0.02, -0.01, 0.01, -0.01, 0.01, 0.02, -0.01, -0.02, 0.03, 0.01, -0.01},
      {0.01, 0.02, 0.01, -0.01, -0.02, 0.01, -0.01, 0.02, 0.01, 0.02, -0.01, 0.01},
      {-0.01, 0.01, 0.01, 0.02, -0.02, -0.01, 0.01, 0.01, 0.0, -0.02, 0.01, 0.03}};
  std::vector<std::vector<double>> caps{
      {100, 102, 101, 98, 103, 104, 101, 99, 102, 105, 107, 106},
      {250, 248, 255, 260, 258, 262, 270, 268, 265, 272, 275, 271},
      {50, 51, 49, 52, 53, 55, 54, 56, 57, 55, 58, 60}};
};

// ---- synthetic run config -------------------------------------------------

inline RunConfig desk_config(std::vector<ModelKind> models, std::uint64_t seed) {
  RunConfig c;
  c.models = std::move(models);
  c.hidden1 = 8;
  c.hidden2 = 4;
  c.train.adam.lr = 0.01;
  c.train.patience = 20;
  c.seed = seed;
  c.workers = 1;
  return c;
}

}  // namespace attnprice::testing
