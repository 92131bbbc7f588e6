#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnprice/data.hpp"
#include "attnprice/error.hpp"
#include "attnprice/numeric.hpp"

namespace attnprice {

struct StockForecast {
  std::string ticker;
  std::vector<double> actual;
  std::vector<double> predicted;
  double train_mean = 0.0;  // mean target over the in-sample block
};

// Aligned out-of-sample forecasts of one model for every stock.
struct ForecastSet {
  std::string model;
  std::vector<MonthIndex> dates;  // target months
  std::vector<StockForecast> stocks;

  void validate() const {
    for (const auto& s : stocks)
      if (s.actual.size() != dates.size() || s.predicted.size() != dates.size())
        throw ValidationError("forecast set '" + model + "': stock " + s.ticker + " is not aligned with the date axis");
  }
};

// 1 - SSE / sum (r - train_mean)^2. Negative when worse than the training mean.
inline double oos_r2(std::span<const double> actual, std::span<const double> predicted, double train_mean) {
  if (actual.size() != predicted.size()) throw ValidationError("oos_r2: length mismatch");
  double sse = 0.0, sst = 0.0;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    sse += (actual[t] - predicted[t]) * (actual[t] - predicted[t]);
    sst += (actual[t] - train_mean) * (actual[t] - train_mean);
  }
  if (sst == 0.0) throw UndefinedMetricError("oos_r2: zero denominator");
  return 1.0 - sse / sst;
}

// Pooled squared error over every stock and step: 1/(T N) sum.
inline double oos_mse(const ForecastSet& fs) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& st : fs.stocks)
    for (std::size_t t = 0; t < st.actual.size(); ++t) {
      s += (st.actual[t] - st.predicted[t]) * (st.actual[t] - st.predicted[t]);
      ++n;
    }
  if (n == 0) throw UndefinedMetricError("oos_mse: no observations");
  return s / static_cast<double>(n);
}

inline double average_oos_r2(const ForecastSet& fs) {
  if (fs.stocks.empty()) throw UndefinedMetricError("average_oos_r2: no stocks");
  double s = 0.0;
  for (const auto& st : fs.stocks) s += oos_r2(st.actual, st.predicted, st.train_mean);
  return s / static_cast<double>(fs.stocks.size());
}

struct AlphaStats {
  std::vector<double> per_stock;  // mean_t (r - r_hat)
  double average = 0.0;
  double annualized = 0.0;        // 12 * average
  std::optional<double> t_stat;   // cross-sectional; empty when undefined
};

inline double annualize_alpha(double monthly) { return 12.0 * monthly; }

// Residual alpha without the t-statistic (always defined for N >= 1).
inline AlphaStats residual_alpha_values(const ForecastSet& fs) {
  if (fs.stocks.empty()) throw UndefinedMetricError("residual_alpha: no stocks");
  AlphaStats a;
  for (const auto& st : fs.stocks) {
    double s = 0.0;
    for (std::size_t t = 0; t < st.actual.size(); ++t) s += st.actual[t] - st.predicted[t];
    a.per_stock.push_back(st.actual.empty() ? 0.0 : s / static_cast<double>(st.actual.size()));
  }
  a.average = mean(a.per_stock);
  a.annualized = annualize_alpha(a.average);
  const double sd = sample_std(a.per_stock);
  if (a.per_stock.size() >= 2 && sd > 0.0)
    a.t_stat = a.average * std::sqrt(static_cast<double>(a.per_stock.size())) / sd;
  return a;
}

// Residual alpha with the cross-sectional t-statistic avg * sqrt(N) / sd(alpha_i).
// Throws when N < 2 or the per-stock alphas have no spread.
inline AlphaStats residual_alpha(const ForecastSet& fs) {
  AlphaStats a = residual_alpha_values(fs);
  if (a.per_stock.size() < 2) throw UndefinedMetricError("residual_alpha: t-statistic needs at least two stocks");
  if (!a.t_stat) throw UndefinedMetricError("residual_alpha: zero cross-sectional variance");
  return a;
}

// ---- Diebold-Mariano ------------------------------------------------------

struct DmResult {
  double statistic = 0.0;
  double p_value = 1.0;  // two-sided, standard normal reference
};

inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Two-sided significance stars at the 90/95/99% levels.
inline int significance_stars(double z) {
  const double a = std::abs(z);
  if (a >= 2.576) return 3;
  if (a >= 1.960) return 2;
  if (a >= 1.645) return 1;
  return 0;
}

// Loss differential series d_t = mean_i (|e_m(t,i)| - |e_n(t,i)|); errors are T x N.
inline std::vector<double> mae_differential(const Matrix& errors_m, const Matrix& errors_n) {
  if (errors_m.rows() != errors_n.rows() || errors_m.cols() != errors_n.cols())
    throw ValidationError("dm_test: error panels differ in shape");
  std::vector<double> d(errors_m.rows(), 0.0);
  for (std::size_t t = 0; t < errors_m.rows(); ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < errors_m.cols(); ++i) s += std::abs(errors_m(t, i)) - std::abs(errors_n(t, i));
    d[t] = s / static_cast<double>(errors_m.cols());
  }
  return d;
}

// DM = mean(d) / SE(d). With hac_lags == 0, SE = sample_std(d) / sqrt(T);
// otherwise a Bartlett-weighted (Newey-West) long-run variance is used.
inline DmResult dm_test_from_differential(std::span<const double> d, std::size_t hac_lags = 0) {
  const std::size_t T = d.size();
  if (T < 3) throw ValidationError("dm_test: need at least 3 periods");
  const double dbar = mean(d);
  double se = 0.0;
  if (hac_lags == 0) {
    se = sample_std(d) / std::sqrt(static_cast<double>(T));
  } else {
    auto gamma = [&](std::size_t lag) {
      double s = 0.0;
      for (std::size_t t = lag; t < T; ++t) s += (d[t] - dbar) * (d[t - lag] - dbar);
      return s / static_cast<double>(T);
    };
    double lrv = gamma(0);
    for (std::size_t l = 1; l <= std::min(hac_lags, T - 1); ++l)
      lrv += 2.0 * (1.0 - static_cast<double>(l) / static_cast<double>(hac_lags + 1)) * gamma(l);
    se = lrv > 0.0 ? std::sqrt(lrv / static_cast<double>(T)) : 0.0;
  }
  if (!(se > 0.0)) throw UndefinedMetricError("dm_test: zero standard error (degenerate test)");
  DmResult r;
  r.statistic = dbar / se;
  r.p_value = normal_two_sided_p(r.statistic);
  return r;
}

inline DmResult dm_test(const Matrix& errors_m, const Matrix& errors_n, std::size_t hac_lags = 0) {
  return dm_test_from_differential(mae_differential(errors_m, errors_n), hac_lags);
}

// T x N forecast errors (actual - predicted).
inline Matrix error_panel(const ForecastSet& fs) {
  Matrix e(fs.dates.size(), fs.stocks.size());
  for (std::size_t i = 0; i < fs.stocks.size(); ++i)
    for (std::size_t t = 0; t < fs.dates.size(); ++t) e(t, i) = fs.stocks[i].actual[t] - fs.stocks[i].predicted[t];
  return e;
}

// ---- permutation importance ----------------------------------------------

using Permuter = std::function<void(std::span<std::size_t>, Rng&)>;

inline Permuter shuffle_permuter() {
  return [](std::span<std::size_t> idx, Rng& rng) { rng.shuffle(idx); };
}

// Increase in MSE over `eval_rows` when one input column is shuffled among
// those rows, averaged over `repeats` draws. `predict` maps an input matrix
// to one prediction per row.
template <typename Predict>
std::vector<double> permutation_importance(Predict&& predict, const Matrix& x, std::span<const double> y,
                                           std::span<const std::size_t> eval_rows, std::size_t repeats,
                                           std::uint64_t seed, const Permuter& permuter = shuffle_permuter()) {
  if (repeats == 0) throw ConfigError("permutation_importance: repeats must be >= 1");
  auto mse_on = [&](const std::vector<double>& yhat) {
    double s = 0.0;
    for (std::size_t r : eval_rows) s += (y[r] - yhat[r]) * (y[r] - yhat[r]);
    return s / static_cast<double>(eval_rows.size());
  };
  const double baseline = mse_on(predict(x));
  std::vector<double> importance(x.cols(), 0.0);
  Rng rng(seed);
  Matrix perturbed = x;
  std::vector<std::size_t> order(eval_rows.size());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double total = 0.0;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      permuter(order, rng);
      for (std::size_t i = 0; i < eval_rows.size(); ++i) perturbed(eval_rows[i], c) = x(eval_rows[order[i]], c);
      total += mse_on(predict(perturbed)) - baseline;
    }
    for (std::size_t r : eval_rows) perturbed(r, c) = x(r, c);
    importance[c] = total / static_cast<double>(repeats);
  }
  return importance;
}

// Pearson correlations between the columns of a (T x p) and b (T x q).
inline Matrix correlation_matrix(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ValidationError("correlation_matrix: row counts differ");
  auto centred = [](const Matrix& m) {
    Matrix out = m;
    std::vector<double> sd(m.cols(), 0.0);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      auto col = m.column(c);
      const double mu = mean(col);
      double ss = 0.0;
      for (std::size_t r = 0; r < m.rows(); ++r) {
        out(r, c) = m(r, c) - mu;
        ss += out(r, c) * out(r, c);
      }
      sd[c] = std::sqrt(ss);
    }
    return std::pair{out, sd};
  };
  auto [ca, sa] = centred(a);
  auto [cb, sb] = centred(b);
  Matrix corr(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += ca(r, i) * cb(r, j);
      const double denom = sa[i] * sb[j];
      corr(i, j) = denom > 0.0 ? s / denom : std::numeric_limits<double>::quiet_NaN();
    }
  return corr;
}

}  // namespace attnprice
