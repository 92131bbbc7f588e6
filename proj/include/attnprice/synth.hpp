#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "attnprice/data.hpp"
#include "attnprice/error.hpp"
#include "attnprice/numeric.hpp"

namespace attnprice {

struct SynthConfig {
  std::size_t stocks = 5;
  std::size_t months = 240;
  std::size_t factors = 8;
  std::size_t sources = 3;        // common AR(1) drivers behind the factors
  double phi = 0.5;               // AR(1) coefficient of every source
  double innovation_sd = 0.05;    // source shock scale
  double idio_ratio = 0.1;        // factor-specific noise sd / common sd
  double noise_ratio = 0.5;       // noise sd / signal sd
  bool pure_noise = false;        // zero betas, returns are noise only
  double noise_sd = 0.05;         // return sd when pure_noise is set
  double missing_frac = 0.0;      // factor cells blanked at random
  MonthIndex start = make_month(1990, 1);
  std::uint64_t seed = 0;

  void validate() const {
    if (stocks == 0 || factors == 0 || sources == 0) throw ConfigError("synth: stocks, factors and sources must be positive");
    if (!(idio_ratio >= 0.0)) throw ConfigError("synth: idio_ratio must be >= 0");
    if (months < 3) throw ConfigError("synth: months must be >= 3");
    if (!(std::abs(phi) < 1.0)) throw ConfigError("synth: |phi| must be < 1");
    if (!(innovation_sd > 0.0)) throw ConfigError("synth: innovation_sd must be > 0");
    if (!(noise_ratio >= 0.0) || !(noise_sd >= 0.0)) throw ConfigError("synth: noise levels must be >= 0");
    if (!(missing_frac >= 0.0 && missing_frac < 1.0)) throw ConfigError("synth: missing_frac must lie in [0, 1)");
  }
};

struct SynthData {
  Panel factors;   // months x factors
  Panel returns;   // months x stocks; row t depends on factor row t-1
  Panel caps;      // months x stocks, constant per stock
  Panel rf;        // months x 1, zeros
  Matrix betas;    // stocks x factors
  std::vector<double> signal_sd;  // per stock
};

inline std::string synth_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu", prefix, i + 1);
  return buf;
}

// Factors f_t = L s_t + u_t: `sources` independent stationary AR(1) drivers
// mixed by random loadings plus white factor-specific noise, so the panel is
// close to low rank. Returns r_{i,t+1} = beta_i' f_t + e_{i,t+1}.
inline SynthData synth(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t T = cfg.months, n = cfg.factors, N = cfg.stocks, k = cfg.sources;
  Rng factor_rng(derive_seed(cfg.seed, 1)), beta_rng(derive_seed(cfg.seed, 2)), noise_rng(derive_seed(cfg.seed, 3));
  Rng cap_rng(derive_seed(cfg.seed, 4)), miss_rng(derive_seed(cfg.seed, 5)), load_rng(derive_seed(cfg.seed, 6));

  const double source_sd = cfg.innovation_sd / std::sqrt(1.0 - cfg.phi * cfg.phi);
  // Loadings scaled so each factor's common part has sd source_sd.
  Matrix load(n, k);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t q = 0; q < k; ++q) load(j, q) = load_rng.normal() / std::sqrt(static_cast<double>(k));
  const double idio_sd = cfg.idio_ratio * source_sd;

  // Row 0 is a burn-in month that drives the first return only.
  Matrix src(T + 1, k), f(T + 1, n);
  for (std::size_t q = 0; q < k; ++q) src(0, q) = source_sd * factor_rng.normal();
  for (std::size_t t = 1; t <= T; ++t)
    for (std::size_t q = 0; q < k; ++q) src(t, q) = cfg.phi * src(t - 1, q) + cfg.innovation_sd * factor_rng.normal();
  for (std::size_t t = 0; t <= T; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      double v = idio_sd * factor_rng.normal();
      for (std::size_t q = 0; q < k; ++q) v += load(j, q) * src(t, q);
      f(t, j) = v;
    }

  SynthData out;
  out.betas = Matrix(N, n);
  out.signal_sd.assign(N, 0.0);
  if (!cfg.pure_noise)
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < n; ++j) out.betas(i, j) = beta_rng.normal() / std::sqrt(static_cast<double>(n));
      // Var(beta' f) = source_sd^2 |L' beta|^2 + idio_sd^2 |beta|^2
      double common = 0.0, own = 0.0;
      for (std::size_t q = 0; q < k; ++q) {
        double lb = 0.0;
        for (std::size_t j = 0; j < n; ++j) lb += load(j, q) * out.betas(i, j);
        common += lb * lb;
      }
      for (std::size_t j = 0; j < n; ++j) own += out.betas(i, j) * out.betas(i, j);
      out.signal_sd[i] = std::sqrt(source_sd * source_sd * common + idio_sd * idio_sd * own);
    }

  std::vector<MonthIndex> dates(T);
  for (std::size_t t = 0; t < T; ++t) dates[t] = cfg.start + static_cast<MonthIndex>(t);

  Matrix fv(T, n), rv(T, N), cv(T, N), rfv(T, 1);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < n; ++j)
      fv(t, j) = miss_rng.uniform() < cfg.missing_frac ? std::numeric_limits<double>::quiet_NaN() : f(t + 1, j);
  for (std::size_t i = 0; i < N; ++i) {
    const double sd = cfg.pure_noise ? cfg.noise_sd : cfg.noise_ratio * out.signal_sd[i];
    for (std::size_t t = 0; t < T; ++t) {
      double signal = 0.0;
      for (std::size_t j = 0; j < n; ++j) signal += out.betas(i, j) * f(t, j);
      rv(t, i) = signal + sd * noise_rng.normal();
    }
    const double cap = std::exp(std::log(1000.0) + cap_rng.normal());
    for (std::size_t t = 0; t < T; ++t) cv(t, i) = cap;
  }

  std::vector<std::string> fnames, snames;
  for (std::size_t j = 0; j < n; ++j) fnames.push_back(synth_name("f", j));
  for (std::size_t i = 0; i < N; ++i) snames.push_back(synth_name("S", i));
  out.factors = make_panel(PanelKind::Factor, dates, fnames, std::move(fv));
  out.returns = make_panel(PanelKind::Returns, dates, snames, std::move(rv));
  out.caps = make_panel(PanelKind::Caps, dates, snames, std::move(cv));
  out.rf = make_panel(PanelKind::RiskFree, dates, {"rf"}, std::move(rfv));
  return out;
}

}  // namespace attnprice
