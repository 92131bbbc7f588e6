#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "attnprice/autoencoder.hpp"
#include "attnprice/backtest.hpp"
#include "attnprice/data.hpp"
#include "attnprice/metrics.hpp"
#include "attnprice/model.hpp"
#include "attnprice/training.hpp"

namespace attnprice {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

// ---- configuration --------------------------------------------------------

struct RunConfig {
  fs::path factors_path, returns_path, caps_path, rf_path;
  double max_missing = 0.40;

  std::string period = "custom";  // 1911 | 2112 | 2212 | custom
  std::size_t train_len = 0;      // 0 = every sample before the test block
  std::size_t test_len = 0;
  MonthIndex test_start = make_month(2013, 1);

  std::vector<ModelKind> models;

  TrainConfig train;
  std::size_t hidden1 = 64, hidden2 = 32, window_w = 4;
  double valid_frac = 0.20;
  std::size_t refit_every = 1;

  PretrainConfig pretrain;
  bool pretrain_per_window = true;
  bool scale_factors = true;  // in-sample [0, 1] range scaling ahead of the autoencoder

  double cost_bp = 50.0;
  std::vector<Weighting> weightings{Weighting::Equal, Weighting::Value};

  std::size_t dm_hac_lags = 0;
  bool importance = false;
  std::size_t importance_repeats = 5;

  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  std::size_t workers = 0;  // 0 = hardware concurrency

  void validate() const {
    if (models.empty()) throw ConfigError("config: [models] list must name at least one model");
    if (factors_path.empty() || returns_path.empty()) throw ConfigError("config: [data] factors and returns are required");
    if (period == "custom") {
      if (train_len == 0 || test_len == 0) throw ConfigError("config: period 'custom' requires train_len and test_len");
    } else if (period != "1911" && period != "2112" && period != "2212") {
      throw ConfigError("config: unknown period label '" + period + "'");
    }
    if (train_len != 0 && train_len < 5) throw ConfigError("config: train_len must be >= 5");
    if (refit_every == 0) throw ConfigError("config: refit_every must be >= 1");
    if (!(valid_frac > 0.0 && valid_frac < 1.0)) throw ConfigError("config: valid_frac must lie in (0, 1)");
    if (hidden1 == 0 || hidden2 == 0) throw ConfigError("config: hidden_dims must be positive");
    if (window_w == 0) throw ConfigError("config: window_w must be >= 1");
    if (!(cost_bp >= 0.0)) throw ConfigError("config: cost_bp must be >= 0");
    if (weightings.empty()) throw ConfigError("config: [backtest] weightings must not be empty");
    if (importance_repeats == 0) throw ConfigError("config: importance_repeats must be >= 1");
    if (pretrain.max_epochs == 0 || pretrain.patience == 0) throw ConfigError("config: pretrain epochs/patience must be >= 1");
    train.validate();
  }

  ModelSpec spec_for(ModelKind k, std::size_t input_width) const {
    return ModelSpec{k, input_width, hidden1, hidden2, window_w};
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    auto t = std::string(trim(item));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  auto d = parse_double(v);
  if (!d) throw ConfigError("config: " + key + " is not a number: '" + v + "'");
  return *d;
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0 || d != std::floor(d)) throw ConfigError("config: " + key + " must be a non-negative integer");
  return static_cast<std::size_t>(d);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: " + key + " must be a boolean");
}

inline std::uint64_t to_seed(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long s = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " must be an unsigned integer");
  }
}

}  // namespace detail

inline void apply_config_value(RunConfig& c, const std::string& section, const std::string& key, const std::string& v,
                               const fs::path& base) {
  using namespace detail;
  const std::string k = section + "." + key;
  auto path = [&](const std::string& p) { return p.empty() ? fs::path{} : (fs::path(p).is_absolute() ? fs::path(p) : base / p); };
  if (k == "data.factors") c.factors_path = path(v);
  else if (k == "data.returns") c.returns_path = path(v);
  else if (k == "data.caps") c.caps_path = path(v);
  else if (k == "data.rf") c.rf_path = path(v);
  else if (k == "data.max_missing") c.max_missing = to_double(k, v);
  else if (k == "period.label") c.period = v;
  else if (k == "period.train_len") c.train_len = to_count(k, v);
  else if (k == "period.test_len") c.test_len = to_count(k, v);
  else if (k == "period.test_start") {
    auto m = parse_month(v);
    if (!m) throw ConfigError("config: period.test_start must be YYYY-MM");
    c.test_start = *m;
  } else if (k == "models.list" || k == "models.model") {
    c.models.clear();
    for (const auto& name : split_list(v)) c.models.push_back(parse_model_kind(name));
  } else if (k == "train.lr") c.train.adam.lr = to_double(k, v);
  else if (k == "train.lambda") c.train.lambda = to_double(k, v);
  else if (k == "train.patience") c.train.patience = to_count(k, v);
  else if (k == "train.max_epochs") c.train.max_epochs = to_count(k, v);
  else if (k == "train.batch_size") c.train.batch_size = to_count(k, v);
  else if (k == "train.hidden_dims") {
    auto dims = split_list(v);
    if (dims.size() != 2) throw ConfigError("config: train.hidden_dims must list two widths");
    c.hidden1 = to_count(k, dims[0]);
    c.hidden2 = to_count(k, dims[1]);
  } else if (k == "train.window_w") c.window_w = to_count(k, v);
  else if (k == "train.valid_frac") c.valid_frac = to_double(k, v);
  else if (k == "train.refit_every") c.refit_every = to_count(k, v);
  else if (k == "pretrain.max_epochs") c.pretrain.max_epochs = to_count(k, v);
  else if (k == "pretrain.lr") c.pretrain.lr = to_double(k, v);
  else if (k == "pretrain.patience") c.pretrain.patience = to_count(k, v);
  else if (k == "pretrain.decoder") c.pretrain.decoder_activation = parse_activation(v);
  else if (k == "pretrain.refit") {
    if (v == "window") c.pretrain_per_window = true;
    else if (v == "once") c.pretrain_per_window = false;
    else throw ConfigError("config: pretrain.refit must be 'window' or 'once'");
  } else if (k == "pretrain.scale_inputs") c.scale_factors = to_bool(k, v);
  else if (k == "backtest.cost_bp") c.cost_bp = to_double(k, v);
  else if (k == "backtest.weightings") {
    c.weightings.clear();
    for (const auto& w : split_list(v)) c.weightings.push_back(parse_weighting(w));
  } else if (k == "evaluate.dm_hac_lags") c.dm_hac_lags = to_count(k, v);
  else if (k == "evaluate.importance") c.importance = to_bool(k, v);
  else if (k == "evaluate.importance_repeats") c.importance_repeats = to_count(k, v);
  else if (k == "run.seed") c.seed = to_seed(k, v);
  else if (k == "run.output_dir") c.output_dir = path(v);
  else if (k == "run.workers") c.workers = to_count(k, v);
  else throw ConfigError("config: unknown key '" + k + "'");
}

// Environment overrides (seed and output directory only).
inline void apply_env_overrides(RunConfig& c) {
  if (const char* s = std::getenv("ATTNPRICE_SEED"); s && *s) c.seed = detail::to_seed("ATTNPRICE_SEED", s);
  if (const char* o = std::getenv("ATTNPRICE_OUTPUT_DIR"); o && *o) c.output_dir = o;
}

inline RunConfig parse_run_config(std::istream& in, const fs::path& base = ".") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) apply_config_value(c, section, key, value.data(), base);
  }
  c.pretrain.seed = c.seed;
  return c;
}

inline RunConfig load_run_config(const fs::path& path, bool env_overrides = true) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  RunConfig c = parse_run_config(in, path.parent_path().empty() ? fs::path(".") : path.parent_path());
  if (env_overrides) apply_env_overrides(c);
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json models = nlohmann::json::array();
  for (auto m : c.models) models.push_back(to_string(m));
  nlohmann::json weightings = nlohmann::json::array();
  for (auto w : c.weightings) weightings.push_back(to_string(w));
  return {
      {"data",
       {{"factors", c.factors_path.string()},
        {"returns", c.returns_path.string()},
        {"caps", c.caps_path.string()},
        {"rf", c.rf_path.string()},
        {"max_missing", c.max_missing}}},
      {"period",
       {{"label", c.period}, {"train_len", c.train_len}, {"test_len", c.test_len}, {"test_start", format_month(c.test_start)}}},
      {"models", models},
      {"train",
       {{"lr", c.train.adam.lr},
        {"lambda", c.train.lambda},
        {"patience", c.train.patience},
        {"max_epochs", c.train.max_epochs},
        {"batch_size", c.train.batch_size},
        {"hidden_dims", {c.hidden1, c.hidden2}},
        {"window_w", c.window_w},
        {"valid_frac", c.valid_frac},
        {"refit_every", c.refit_every}}},
      {"pretrain",
       {{"max_epochs", c.pretrain.max_epochs},
        {"lr", c.pretrain.lr},
        {"patience", c.pretrain.patience},
        {"decoder", to_string(c.pretrain.decoder_activation)},
        {"refit", c.pretrain_per_window ? "window" : "once"},
        {"scale_inputs", c.scale_factors}}},
      {"backtest", {{"cost_bp", c.cost_bp}, {"weightings", weightings}}},
      {"evaluate",
       {{"dm_hac_lags", c.dm_hac_lags}, {"importance", c.importance}, {"importance_repeats", c.importance_repeats}}},
      {"run", {{"seed", c.seed}, {"output_dir", c.output_dir.string()}, {"workers", c.workers}}},
  };
}

// ---- data assembly --------------------------------------------------------

inline void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

// Aligned inputs. Sample k pairs factor month k with the returns of month k+1.
struct Dataset {
  Panel factors;  // filtered, months x n
  Panel returns;  // months x N, same dates
  std::optional<Panel> caps;
  std::optional<Panel> rf;

  std::size_t samples() const { return factors.rows() > 0 ? factors.rows() - 1 : 0; }
  MonthIndex target_month(std::size_t k) const { return factors.dates[k + 1]; }
};

inline Dataset load_dataset(const RunConfig& c) {
  Dataset d;
  d.factors = load_panel(c.factors_path.string(), PanelKind::Factor);
  d.returns = load_panel(c.returns_path.string(), PanelKind::Returns);
  const std::size_t before = d.factors.cols();
  d.factors = filter_by_missingness(d.factors, c.max_missing);
  if (d.factors.cols() < before)
    warn(std::to_string(before - d.factors.cols()) + " factor column(s) exceed the missing threshold and were dropped");
  if (std::size_t dropped = intersect_dates(d.factors, d.returns))
    warn("factor and return dates differ; " + std::to_string(dropped) + " row(s) dropped");
  if (d.factors.rows() < 3) throw DataError("dataset: fewer than 3 common months");
  if (!c.caps_path.empty()) d.caps = load_panel(c.caps_path.string(), PanelKind::Caps);
  if (!c.rf_path.empty()) d.rf = load_panel(c.rf_path.string(), PanelKind::RiskFree);
  return d;
}

inline MonthIndex period_end(const std::string& label) {
  if (label == "1911") return make_month(2019, 11);
  if (label == "2112") return make_month(2021, 12);
  if (label == "2212") return make_month(2022, 12);
  throw ConfigError("period '" + label + "' has no fixed end month");
}

struct Split {
  std::size_t total = 0;  // samples in use
  std::size_t train_len = 0;
  std::size_t test_len = 0;
};

inline Split resolve_split(const RunConfig& c, const Dataset& d) {
  Split s;
  if (c.period == "custom") {
    s = {d.samples(), c.train_len, c.test_len};
  } else {
    const MonthIndex end = period_end(c.period);
    std::size_t first_test = d.samples();
    for (std::size_t k = 0; k < d.samples() && d.target_month(k) <= end; ++k) {
      s.total = k + 1;
      if (d.target_month(k) >= c.test_start && first_test == d.samples()) first_test = k;
    }
    if (first_test >= s.total) throw DataError("dataset: no samples fall in the test period of " + c.period);
    if (d.target_month(s.total - 1) != end) warn("data ends before the period end month " + format_month(end));
    s.test_len = s.total - first_test;
    s.train_len = c.train_len ? c.train_len : first_test;
    if (s.train_len > first_test) throw ConfigError("config: train_len exceeds the samples before the test block");
  }
  if (s.train_len + s.test_len > s.total)
    throw ConfigError("config: train_len + test_len exceeds the " + std::to_string(s.total) + " available samples");
  return s;
}

// ---- forecasting ----------------------------------------------------------

inline std::size_t resolve_workers(std::size_t requested) {
  if (requested) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

// Runs fn(i) for i in [0, n) on a bounded pool. The first exception is
// rethrown after every worker has stopped.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Per-stock z-score of the targets over a train block; forecasts are mapped back.
struct TargetScale {
  double mean = 0.0;
  double sd = 1.0;

  static TargetScale fit(std::span<const double> y, std::size_t first, std::size_t last) {
    std::vector<double> obs;
    for (std::size_t k = first; k <= last; ++k)
      if (!std::isnan(y[k])) obs.push_back(y[k]);
    if (obs.size() < 2) throw DataError("too few observed training targets");
    TargetScale t;
    t.mean = attnprice::mean(obs);
    const double s = sample_std(obs);
    t.sd = s > 1e-12 ? s : 1.0;
    return t;
  }

  std::vector<double> apply(std::span<const double> y) const {
    std::vector<double> out(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) out[k] = (y[k] - mean) / sd;
    return out;
  }

  double invert(double z) const { return mean + sd * z; }
};

struct LatentBlock {
  PretrainResult ae;
  Matrix inputs;  // standardized latent factors, one row per sample
};

inline LatentBlock build_latent(const Dataset& d, const Window& w, const RunConfig& c, std::uint64_t seed) {
  PretrainConfig pc = c.pretrain;
  pc.seed = seed;
  LatentBlock b;
  b.ae = c.scale_factors
             ? pretrain(RangeScaler::fit(d.factors, w.train_start, w.train_end).apply(d.factors), w.train_start, w.train_end, pc)
             : pretrain(d.factors, w.train_start, w.train_end, pc);
  const Standardizer z = Standardizer::fit(b.ae.latent, w.train_start, w.train_end);
  b.inputs = z.apply(b.ae.latent).slice_rows(0, d.samples());
  return b;
}

struct ForecastRun {
  std::vector<ForecastSet> sets;                  // one per configured model
  std::vector<std::vector<double>> importance;    // per model, per latent factor (optional)
  Matrix latent_corr;                             // latent x original factor, first block
  std::size_t latent_width = 0;
};

inline ForecastRun run_forecasts(const RunConfig& c, const Dataset& d, const Split& split) {
  const RollingWindowPlan plan = make_rolling_plan(split.total, split.train_len, c.valid_frac, split.test_len);
  const std::size_t N = d.returns.cols();

  // Targets per stock; stocks with any missing test target are dropped.
  std::vector<std::vector<double>> targets;
  std::vector<std::size_t> stock_cols;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> y(split.total);
    bool complete = true;
    for (std::size_t k = 0; k < split.total; ++k) {
      y[k] = d.returns.values(k + 1, i);
      if (k >= split.total - split.test_len && std::isnan(y[k])) complete = false;
    }
    if (!complete) {
      warn("stock " + d.returns.names[i] + " has missing test-period returns and is excluded");
      continue;
    }
    targets.push_back(std::move(y));
    stock_cols.push_back(i);
  }
  if (stock_cols.empty()) throw DataError("dataset: no stock has complete test-period returns");

  ForecastRun run;
  const std::size_t M = c.models.size(), S = stock_cols.size();
  for (ModelKind m : c.models) {
    ForecastSet fs;
    fs.model = to_string(m);
    for (const auto& w : plan.windows) fs.dates.push_back(d.target_month(w.test_index));
    for (std::size_t s = 0; s < S; ++s) {
      StockForecast sf;
      sf.ticker = d.returns.names[stock_cols[s]];
      sf.actual.resize(plan.windows.size());
      sf.predicted.resize(plan.windows.size());
      const Window& w0 = plan.windows.front();
      std::vector<double> in_sample;
      for (std::size_t k = w0.train_start; k <= w0.train_end; ++k)
        if (!std::isnan(targets[s][k])) in_sample.push_back(targets[s][k]);
      sf.train_mean = mean(in_sample);
      for (std::size_t j = 0; j < plan.windows.size(); ++j) sf.actual[j] = targets[s][plan.windows[j].test_index];
      fs.stocks.push_back(std::move(sf));
    }
    run.sets.push_back(std::move(fs));
  }
  if (c.importance) run.importance.assign(M, {});

  const std::size_t workers = resolve_workers(c.workers);
  std::optional<LatentBlock> shared_latent;
  for (std::size_t k0 = 0, block = 0; k0 < plan.windows.size(); k0 += c.refit_every, ++block) {
    const std::size_t k1 = std::min(plan.windows.size(), k0 + c.refit_every) - 1;
    const Window& w = plan.windows[k0];
    const std::uint64_t block_seed = derive_seed(c.seed, 1000 + block);
    if (c.pretrain_per_window || !shared_latent) shared_latent = build_latent(d, w, c, derive_seed(block_seed, 0xAE));
    const LatentBlock& lat = *shared_latent;
    if (block == 0) {
      run.latent_width = lat.inputs.cols();
      std::vector<std::size_t> rows(w.train_len());
      for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = w.train_start + r;
      const Matrix filled = mean_filled(d.factors, observed_column_means(d.factors, rows));
      run.latent_corr = correlation_matrix(lat.ae.latent.slice_rows(w.train_start, w.train_len()),
                                           filled.slice_rows(w.train_start, w.train_len()));
    }

    // One forward pass over [train_start, last test index] yields every
    // forecast of the block; predictions at row t only read rows <= t.
    const std::size_t span_len = plan.windows[k1].test_index - w.train_start + 1;
    const Matrix history = lat.inputs.slice_rows(w.train_start, span_len);
    std::vector<std::vector<double>> block_importance(M * S);
    parallel_for(M * S, workers, [&](std::size_t job) {
      const std::size_t m = job / S, s = job % S;
      TrainConfig tc = c.train;
      tc.seed = derive_seed(block_seed, (static_cast<std::uint64_t>(m) << 32) | s);
      const TargetScale ts = TargetScale::fit(targets[s], w.train_start, w.train_end);
      const TrainedModel tm =
          train_model(c.spec_for(c.models[m], lat.inputs.cols()), lat.inputs, ts.apply(targets[s]), w, tc);
      std::vector<double> yhat = tm.model.predict(history);
      for (double& v : yhat) v = ts.invert(v);
      for (std::size_t j = k0; j <= k1; ++j) {
        const double p = yhat[plan.windows[j].test_index - w.train_start];
        if (!std::isfinite(p)) throw NumericError("non-finite forecast for " + run.sets[m].stocks[s].ticker);
        run.sets[m].stocks[s].predicted[j] = p;
      }
      if (c.importance && block == 0) {
        // Whole out-of-sample block scored with the first window's model.
        const std::size_t test_first = plan.windows.front().test_index, test_last = plan.windows.back().test_index;
        const Matrix full = lat.inputs.slice_rows(w.train_start, test_last - w.train_start + 1);
        std::vector<double> y(full.rows());
        for (std::size_t r = 0; r < y.size(); ++r) y[r] = targets[s][w.train_start + r];
        std::vector<std::size_t> rows;
        for (std::size_t t = test_first; t <= test_last; ++t) rows.push_back(t - w.train_start);
        auto predict = [&](const Matrix& xm) {
          auto p = tm.model.predict(xm);
          for (double& v : p) v = ts.invert(v);
          return p;
        };
        block_importance[job] = permutation_importance(predict, full, y,
                                                       rows, c.importance_repeats, derive_seed(tc.seed, 0x1D));
      }
    });
    if (c.importance && block == 0)
      for (std::size_t m = 0; m < M; ++m) {
        std::vector<double> avg(lat.inputs.cols(), 0.0);
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += block_importance[m * S + s][j] / static_cast<double>(S);
        run.importance[m] = std::move(avg);
      }
  }
  return run;
}

// ---- persistence of forecasts --------------------------------------------

inline std::string fmt(double v, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

inline void write_forecasts(const fs::path& path, const std::vector<ForecastSet>& sets) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "model,ticker,date,actual,predicted,train_mean\n";
  for (const auto& fs : sets)
    for (const auto& s : fs.stocks)
      for (std::size_t t = 0; t < fs.dates.size(); ++t)
        out << fs.model << ',' << s.ticker << ',' << format_month(fs.dates[t]) << ',' << format_double(s.actual[t]) << ','
            << format_double(s.predicted[t]) << ',' << format_double(s.train_mean) << '\n';
}

inline std::vector<ForecastSet> read_forecasts(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string() + " (run the train stage first)");
  std::string line;
  std::getline(in, line);
  std::vector<ForecastSet> sets;
  std::map<std::string, std::size_t> model_index;
  std::vector<std::map<std::string, std::size_t>> stock_index;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 6) throw FormatError("forecasts: expected 6 cells", row, cells.size());
    const std::string model(cells[0]), ticker(cells[1]);
    auto month = parse_month(cells[2]);
    if (!month) throw FormatError("forecasts: bad date", row, 3);
    double v[3];
    for (int j = 0; j < 3; ++j) {
      auto p = detail::parse_double(cells[3 + j]);
      if (!p) throw FormatError("forecasts: bad number", row, 4 + j);
      v[j] = *p;
    }
    auto [mit, new_model] = model_index.try_emplace(model, sets.size());
    if (new_model) {
      sets.push_back(ForecastSet{model, {}, {}});
      stock_index.emplace_back();
    }
    ForecastSet& fs = sets[mit->second];
    auto [sit, new_stock] = stock_index[mit->second].try_emplace(ticker, fs.stocks.size());
    if (new_stock) fs.stocks.push_back(StockForecast{ticker, {}, {}, v[2]});
    StockForecast& sf = fs.stocks[sit->second];
    if (sit->second == 0) fs.dates.push_back(*month);
    sf.actual.push_back(v[0]);
    sf.predicted.push_back(v[1]);
  }
  for (const auto& fs : sets) fs.validate();
  if (sets.empty()) throw DataError("forecasts: " + path.string() + " holds no rows");
  return sets;
}

// ---- reports --------------------------------------------------------------

inline void write_metrics(const fs::path& path, const std::vector<ForecastSet>& sets) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "model,avg_oos_r2,oos_mse,avg_alpha,ann_alpha,alpha_t\n";
  for (const auto& fs : sets) {
    std::optional<double> r2;
    try {
      r2 = average_oos_r2(fs);
    } catch (const UndefinedMetricError& e) {
      warn(fs.model + ": " + e.what());
    }
    const AlphaStats a = residual_alpha_values(fs);
    out << fs.model << ',' << fmt_opt(r2) << ',' << fmt(oos_mse(fs)) << ',' << fmt(a.average) << ',' << fmt(a.annualized)
        << ',' << fmt_opt(a.t_stat) << '\n';
  }
}

inline void write_dm(const fs::path& path, const std::vector<ForecastSet>& sets, std::size_t hac_lags) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "model_m,model_n,dm_stat,p_value,stars\n";
  std::vector<Matrix> errors;
  for (const auto& fs : sets) errors.push_back(error_panel(fs));
  for (std::size_t a = 0; a < sets.size(); ++a)
    for (std::size_t b = 0; b < sets.size(); ++b) {
      if (a == b) continue;
      out << sets[a].model << ',' << sets[b].model << ',';
      try {
        const DmResult r = dm_test(errors[a], errors[b], hac_lags);
        out << fmt(r.statistic) << ',' << fmt(r.p_value) << ',' << std::string(significance_stars(r.statistic), '*') << '\n';
      } catch (const UndefinedMetricError&) {
        out << "NA,NA,\n";
      }
    }
}

struct BacktestInputs {
  Matrix returns;            // T x N realized returns
  std::optional<Matrix> caps;  // T x N caps of the month before each target
  std::vector<double> rf;    // T
};

inline BacktestInputs backtest_inputs(const ForecastSet& fs, const Dataset& d, bool need_caps) {
  BacktestInputs in;
  const std::size_t T = fs.dates.size(), N = fs.stocks.size();
  in.returns = Matrix(T, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t t = 0; t < T; ++t) in.returns(t, i) = fs.stocks[i].actual[t];
  in.rf.assign(T, 0.0);
  if (d.rf)
    for (std::size_t t = 0; t < T; ++t) {
      auto r = d.rf->row_of(fs.dates[t]);
      if (!r || !d.rf->is_observed(*r, 0)) throw DataError("risk-free rate missing for " + format_month(fs.dates[t]));
      in.rf[t] = d.rf->values(*r, 0);
    }
  if (need_caps) {
    if (!d.caps) throw ConfigError("value weighting requires [data] caps");
    Matrix caps(T, N);
    for (std::size_t i = 0; i < N; ++i) {
      auto col = d.caps->column_of(fs.stocks[i].ticker);
      if (!col) throw DataError("caps file has no column for " + fs.stocks[i].ticker);
      for (std::size_t t = 0; t < T; ++t) {
        auto r = d.caps->row_of(fs.dates[t] - 1);
        if (!r || !d.caps->is_observed(*r, *col))
          throw DataError("market cap missing for " + fs.stocks[i].ticker + " at " + format_month(fs.dates[t] - 1));
        caps(t, i) = d.caps->values(*r, *col);
      }
    }
    in.caps = std::move(caps);
  }
  return in;
}

// Net strategy returns per stock (T x N) for one model.
inline Matrix strategy_returns(const ForecastSet& fs, double cost_bp) {
  Matrix out(fs.dates.size(), fs.stocks.size());
  for (std::size_t i = 0; i < fs.stocks.size(); ++i) {
    const auto& s = fs.stocks[i];
    const auto net = apply_costs(generate_signals(s.actual, s.predicted), s.actual, cost_bp);
    for (std::size_t t = 0; t < net.size(); ++t) out(t, i) = net[t];
  }
  return out;
}

inline void write_curve(const fs::path& path, const std::vector<MonthIndex>& dates, std::span<const double> r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "date,return,cumulative\n";
  double c = 1.0;
  for (std::size_t t = 0; t < r.size(); ++t) {
    c *= 1.0 + r[t];
    out << format_month(dates[t]) << ',' << fmt(r[t]) << ',' << fmt(c) << '\n';
  }
}

inline std::vector<fs::path> write_backtests(const fs::path& dir, const std::string& period,
                                             const std::vector<ForecastSet>& sets, const Dataset& d, const RunConfig& c) {
  std::vector<fs::path> written;
  const bool need_caps =
      std::find(c.weightings.begin(), c.weightings.end(), Weighting::Value) != c.weightings.end();
  const BacktestInputs in = backtest_inputs(sets.front(), d, need_caps);
  for (Weighting wt : c.weightings) {
    const Matrix* caps = wt == Weighting::Value ? &*in.caps : nullptr;
    const fs::path table = dir / ("bt_" + std::string(to_string(wt)) + "_" + period + ".csv");
    std::ofstream out(table);
    if (!out) throw DataError("cannot write " + table.string());
    out << "strategy,ann_return,sharpe,sortino,ann_sharpe,ann_sortino,max_drawdown\n";
    auto emit = [&](const std::string& name, const BacktestResult& r) {
      out << name << ',' << fmt(r.ann_return) << ',' << fmt_opt(r.sharpe) << ',' << fmt_opt(r.sortino) << ','
          << fmt_opt(r.ann_sharpe) << ',' << fmt_opt(r.ann_sortino) << ',' << fmt(r.max_drawdown) << '\n';
    };
    for (const auto& fs : sets) {
      const auto series = aggregate_portfolio(strategy_returns(fs, c.cost_bp), wt, caps);
      emit(fs.model, performance_stats(series, in.rf));
      written.push_back(dir / ("cumret_" + fs.model + "_" + to_string(wt) + ".csv"));
      write_curve(written.back(), fs.dates, series);
    }
    const BacktestResult bh = buy_and_hold(in.returns, wt, caps, in.rf);
    emit("BH", bh);
    written.push_back(dir / ("cumret_BH_" + std::string(to_string(wt)) + ".csv"));
    write_curve(written.back(), sets.front().dates, bh.returns);
    written.push_back(table);
  }
  return written;
}

inline void write_importance(const fs::path& path, const ForecastRun& run) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "model,latent_factor,importance\n";
  for (std::size_t m = 0; m < run.sets.size(); ++m)
    for (std::size_t j = 0; j < run.importance[m].size(); ++j)
      out << run.sets[m].model << ",z" << j + 1 << ',' << fmt(run.importance[m][j]) << '\n';
}

inline void write_matrix_csv(const fs::path& path, const Matrix& m, const std::vector<std::string>& col_names,
                             const std::string& row_prefix) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "latent";
  for (const auto& n : col_names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << row_prefix << r + 1;
    for (std::size_t c = 0; c < m.cols(); ++c) out << ',' << (std::isnan(m(r, c)) ? std::string("NA") : fmt(m(r, c)));
    out << '\n';
  }
}

// ---- manifest -------------------------------------------------------------

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

class RunManifest {
 public:
  explicit RunManifest(const RunConfig& c) {
    doc_["version"] = kVersion;
    doc_["config"] = config_to_json(c);
    doc_["seeds"] = {{"base", c.seed}};
    doc_["stages"] = nlohmann::json::array();
    doc_["files"] = nlohmann::json::array();
  }

  // Runs one stage, recording wall time and status; rethrows failures.
  template <typename Fn>
  void stage(const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto seconds = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    try {
      fn();
    } catch (const std::exception& e) {
      doc_["stages"].push_back({{"name", name}, {"seconds", seconds()}, {"status", "failed"}});
      doc_["failure"] = {{"stage", name}, {"message", e.what()}};
      throw;
    }
    doc_["stages"].push_back({{"name", name}, {"seconds", seconds()}, {"status", "ok"}});
  }

  void add_file(const fs::path& path) {
    doc_["files"].push_back(
        {{"name", path.filename().string()}, {"bytes", fs::file_size(path)}, {"sha256", sha256_file(path)}});
  }

  void set(const std::string& key, nlohmann::json value) { doc_[key] = std::move(value); }
  const nlohmann::json& json() const { return doc_; }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  nlohmann::json doc_;
};

// ---- stages ---------------------------------------------------------------

inline fs::path forecasts_path(const RunConfig& c) { return c.output_dir / ("forecasts_" + c.period + ".csv"); }

// Fits the autoencoder on the first window's in-sample rows and writes its
// parameters, loss curves and latent factors.
inline std::vector<fs::path> stage_pretrain(const RunConfig& c) {
  const Dataset d = load_dataset(c);
  const Split split = resolve_split(c, d);
  const Window w = make_rolling_plan(split.total, split.train_len, c.valid_frac, split.test_len).windows.front();
  fs::create_directories(c.output_dir);
  const LatentBlock lat = build_latent(d, w, c, derive_seed(derive_seed(c.seed, 1000), 0xAE));

  const fs::path params = c.output_dir / "autoencoder_params.csv";
  {
    std::ofstream out(params);
    if (!out) throw DataError("cannot write " + params.string());
    out << "block,row,col,value\n";
    const ParameterSet& ps = lat.ae.model.params();
    for (std::size_t i = 0; i < ps.block_count(); ++i) {
      auto v = ps.view(i);
      for (std::size_t r = 0; r < v.rows; ++r)
        for (std::size_t col = 0; col < v.cols; ++col)
          out << ps.block(i).name << ',' << r << ',' << col << ',' << format_double(v(r, col)) << '\n';
    }
  }
  const fs::path meta = c.output_dir / "autoencoder.json";
  {
    std::ofstream out(meta);
    if (!out) throw DataError("cannot write " + meta.string());
    nlohmann::json j = {{"input_width", lat.ae.model.input_width()},
                        {"latent_width", lat.ae.model.latent_width()},
                        {"decoder", to_string(lat.ae.model.decoder_activation())},
                        {"factors", d.factors.names},
                        {"best_epoch", lat.ae.best_epoch},
                        {"epochs_run", lat.ae.epochs_run},
                        {"train_curve", lat.ae.train_curve},
                        {"valid_curve", lat.ae.valid_curve}};
    out << j.dump(2) << '\n';
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < lat.ae.latent.cols(); ++j) names.push_back("z" + std::to_string(j + 1));
  const fs::path latent = c.output_dir / "latent_factors.csv";
  save_panel(latent.string(), make_panel(PanelKind::Factor, d.factors.dates, names, lat.ae.latent));
  return {params, meta, latent};
}

inline std::vector<fs::path> stage_train(const RunConfig& c, ForecastRun* keep = nullptr) {
  const Dataset d = load_dataset(c);
  const Split split = resolve_split(c, d);
  fs::create_directories(c.output_dir);
  ForecastRun run = run_forecasts(c, d, split);
  std::vector<fs::path> out{forecasts_path(c)};
  write_forecasts(out.back(), run.sets);
  std::vector<std::string> names = d.factors.names;
  out.push_back(c.output_dir / ("corr_latent_" + c.period + ".csv"));
  write_matrix_csv(out.back(), run.latent_corr, names, "z");
  if (c.importance) {
    out.push_back(c.output_dir / ("importance_" + c.period + ".csv"));
    write_importance(out.back(), run);
  }
  if (keep) *keep = std::move(run);
  return out;
}

inline std::vector<fs::path> stage_evaluate(const RunConfig& c) {
  const auto sets = read_forecasts(forecasts_path(c));
  fs::create_directories(c.output_dir);
  std::vector<fs::path> out{c.output_dir / ("metrics_" + c.period + ".csv"), c.output_dir / ("dm_" + c.period + ".csv")};
  write_metrics(out[0], sets);
  write_dm(out[1], sets, c.dm_hac_lags);
  return out;
}

inline std::vector<fs::path> stage_backtest(const RunConfig& c) {
  const auto sets = read_forecasts(forecasts_path(c));
  Dataset d;
  if (!c.caps_path.empty()) d.caps = load_panel(c.caps_path.string(), PanelKind::Caps);
  if (!c.rf_path.empty()) d.rf = load_panel(c.rf_path.string(), PanelKind::RiskFree);
  fs::create_directories(c.output_dir);
  return write_backtests(c.output_dir, c.period, sets, d, c);
}

// train -> evaluate -> backtest, with a manifest written even on failure.
inline RunManifest run(const RunConfig& c) {
  c.validate();
  fs::create_directories(c.output_dir);
  RunManifest manifest(c);
  std::vector<fs::path> files;
  auto collect = [&](std::vector<fs::path> f) { files.insert(files.end(), f.begin(), f.end()); };
  try {
    manifest.stage("train", [&] { collect(stage_train(c)); });
    manifest.stage("evaluate", [&] { collect(stage_evaluate(c)); });
    manifest.stage("backtest", [&] { collect(stage_backtest(c)); });
  } catch (...) {
    for (const auto& f : files) manifest.add_file(f);
    manifest.write(c.output_dir / "manifest.json");
    throw;
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) manifest.add_file(f);
  manifest.write(c.output_dir / "manifest.json");
  return manifest;
}

}  // namespace attnprice
