#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnprice/error.hpp"
#include "attnprice/numeric.hpp"

namespace attnprice {

struct PositionEvent {
  std::size_t index;
  bool open;  // false = close
  bool operator==(const PositionEvent&) const = default;
};

// exposed[t] = 1 when month t's return accrues to the position.
struct PositionSeries {
  std::vector<std::uint8_t> exposed;
  std::vector<PositionEvent> events;
};

// Long-only sign signal. Flat: open at t when predicted and realized returns
// are both strictly positive. Long: close at t when both are strictly
// negative. Returns accrue from the month after the open through the close
// month inclusive.
inline PositionSeries generate_signals(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw ValidationError("generate_signals: length mismatch");
  PositionSeries ps;
  ps.exposed.assign(actual.size(), 0);
  bool long_position = false;
  for (std::size_t t = 0; t < actual.size(); ++t) {
    if (long_position) {
      ps.exposed[t] = 1;
      if (predicted[t] < 0.0 && actual[t] < 0.0) {
        long_position = false;
        ps.events.push_back({t, false});
      }
    } else if (predicted[t] > 0.0 && actual[t] > 0.0) {
      long_position = true;
      ps.events.push_back({t, true});
    }
  }
  return ps;
}

// Net monthly strategy returns. The position value is multiplied by
// (1 - cost_bp / 10000) in the first accruing month after each open and in
// each close month. An open in the final month never accrues and is not charged.
inline std::vector<double> apply_costs(const PositionSeries& ps, std::span<const double> returns, double cost_bp = 50.0) {
  if (cost_bp < 0.0) throw ConfigError("apply_costs: cost_bp must be >= 0");
  if (ps.exposed.size() != returns.size()) throw ValidationError("apply_costs: length mismatch");
  const double keep = 1.0 - cost_bp / 10000.0;
  std::vector<double> haircut(returns.size(), 1.0);
  for (const auto& ev : ps.events) {
    const std::size_t charged = ev.open ? ev.index + 1 : ev.index;
    if (charged < returns.size()) haircut[charged] *= keep;
  }
  std::vector<double> net(returns.size(), 0.0);
  for (std::size_t t = 0; t < returns.size(); ++t)
    if (ps.exposed[t]) net[t] = haircut[t] == 1.0 ? returns[t] : (1.0 + returns[t]) * haircut[t] - 1.0;
  return net;
}

enum class Weighting { Equal, Value };

inline const char* to_string(Weighting w) { return w == Weighting::Equal ? "equal" : "value"; }

inline Weighting parse_weighting(std::string_view s) {
  if (s == "equal") return Weighting::Equal;
  if (s == "value") return Weighting::Value;
  throw ConfigError("unknown weighting '" + std::string(s) + "'");
}

// Portfolio return per month from T x N stock returns. Value weights use the
// supplied T x N cap matrix, whose row t must hold caps known before month t
// (the caller lags them).
inline std::vector<double> aggregate_portfolio(const Matrix& returns, Weighting weighting, const Matrix* caps = nullptr) {
  const std::size_t T = returns.rows(), N = returns.cols();
  if (N == 0) throw ValidationError("aggregate_portfolio: no stocks");
  std::vector<double> out(T, 0.0);
  if (weighting == Weighting::Equal) {
    for (std::size_t t = 0; t < T; ++t) out[t] = mean(returns.row(t));
    return out;
  }
  if (!caps) throw ValidationError("aggregate_portfolio: value weighting requires market caps");
  if (caps->rows() != T || caps->cols() != N) throw ValidationError("aggregate_portfolio: caps not aligned with returns");
  for (std::size_t t = 0; t < T; ++t) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double c = (*caps)(t, i);
      if (!(c > 0.0) || !std::isfinite(c))
        throw ValidationError("aggregate_portfolio: missing or non-positive cap at row " + std::to_string(t));
      total += c;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += (*caps)(t, i) / total * returns(t, i);
    out[t] = s;
  }
  return out;
}

struct BacktestResult {
  std::vector<double> returns;
  double max_drawdown = 0.0;
  double ann_return = 0.0;
  std::optional<double> sharpe;   // monthly; empty when std is zero
  std::optional<double> sortino;  // monthly; empty when there is no downside
  double returns_std = 0.0;
  std::optional<double> ann_sharpe;
  std::optional<double> ann_sortino;
};

// Monthly Sharpe or Sortino ratio to annual.
inline double annualize_ratio(double monthly) { return monthly * std::sqrt(12.0); }

// Value curve c(t) = prod_{s<=t} (1 + r_s), preceded by the initial value 1.
inline std::vector<double> cumulative_curve(std::span<const double> r) {
  std::vector<double> c{1.0};
  for (double x : r) c.push_back(c.back() * (1.0 + x));
  return c;
}

// Largest peak-to-trough fractional decline of a value curve.
inline double max_drawdown(std::span<const double> curve) {
  double peak = -std::numeric_limits<double>::infinity();
  double mdd = 0.0;
  for (double c : curve) {
    peak = std::max(peak, c);
    if (peak > 0.0) mdd = std::max(mdd, (peak - c) / peak);
  }
  return mdd;
}

// Root mean square of the strictly negative returns (target 0).
inline std::optional<double> downside_deviation(std::span<const double> r) {
  double ss = 0.0;
  std::size_t n = 0;
  for (double x : r)
    if (x < 0.0) {
      ss += x * x;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return std::sqrt(ss / static_cast<double>(n));
}

inline BacktestResult performance_stats(std::span<const double> series, std::span<const double> rf) {
  const std::size_t T = series.size();
  if (T < 2) throw ValidationError("performance_stats: need at least 2 periods");
  if (!rf.empty() && rf.size() != T) throw ValidationError("performance_stats: risk-free series not aligned");
  BacktestResult res;
  res.returns.assign(series.begin(), series.end());
  const auto curve = cumulative_curve(series);
  res.max_drawdown = max_drawdown(curve);
  res.ann_return = std::pow(curve.back(), 12.0 / static_cast<double>(T)) - 1.0;
  const double excess = mean(series) - (rf.empty() ? 0.0 : mean(rf));
  const bool constant = std::adjacent_find(series.begin(), series.end(), std::not_equal_to<>()) == series.end();
  res.returns_std = constant ? 0.0 : sample_std(series);
  if (res.returns_std > 0.0) {
    res.sharpe = excess / res.returns_std;
    res.ann_sharpe = annualize_ratio(*res.sharpe);
  }
  if (auto dd = downside_deviation(series); dd && *dd > 0.0) {
    res.sortino = excess / *dd;
    res.ann_sortino = annualize_ratio(*res.sortino);
  }
  return res;
}

// Always-long benchmark with the chosen weighting; no costs.
inline BacktestResult buy_and_hold(const Matrix& returns, Weighting weighting, const Matrix* caps,
                                   std::span<const double> rf) {
  return performance_stats(aggregate_portfolio(returns, weighting, caps), rf);
}

}  // namespace attnprice
