#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnprice/error.hpp"

namespace attnprice {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam: beta1 and beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update. The step counter is incremented before the
// moments are corrected, so the first call uses 1 - beta^1.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericError("adam_step: non-finite gradient at index " + std::to_string(i));

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

// Patience-based early stopping. Feed one validation error per check; the
// snapshot taken at the best strictly-improving check is retained.
template <typename Snapshot>
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("early stopping: patience must be >= 1");
  }

  // Returns true while training should continue.
  bool observe(double validation_error, const Snapshot& current) {
    ++checks_;
    if (validation_error < best_error_) {
      best_error_ = validation_error;
      best_ = current;
      best_check_ = checks_;
      bad_checks_ = 0;
    } else {
      ++bad_checks_;
    }
    best_history_.push_back(best_error_);
    return !should_stop();
  }

  bool should_stop() const noexcept { return bad_checks_ >= patience_; }
  bool has_best() const noexcept { return best_.has_value(); }
  const Snapshot& best() const { return *best_; }
  double best_error() const noexcept { return best_error_; }
  // 1-based index of the check that produced best().
  std::size_t best_check() const noexcept { return best_check_; }
  std::size_t checks() const noexcept { return checks_; }
  const std::vector<double>& best_history() const noexcept { return best_history_; }

 private:
  std::size_t patience_;
  std::size_t checks_ = 0;
  std::size_t bad_checks_ = 0;
  std::size_t best_check_ = 0;
  double best_error_ = std::numeric_limits<double>::infinity();
  std::optional<Snapshot> best_;
  std::vector<double> best_history_;
};

}  // namespace attnprice
