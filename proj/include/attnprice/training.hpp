#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnprice/data.hpp"
#include "attnprice/model.hpp"
#include "attnprice/optim.hpp"

namespace attnprice {

struct TrainConfig {
  AdamConfig adam;           // lr 0.001, betas 0.9 / 0.999, eps 1e-8
  double lambda = 1e-4;      // L1 coefficient
  std::size_t patience = 10;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;

  void validate() const {
    adam.validate();
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  }
};

struct TrainLog {
  std::vector<double> train_loss;  // regularized loss on fit rows, per epoch
  std::vector<double> valid_mse;   // validation MSE after each epoch's update
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct TrainedModel {
  Forecaster model;
  TrainLog log;
  Window window{};
};

// Fits one forecaster on the window's train block of (x, y), where row k of
// x holds the inputs known at step k and y[k] the target one step ahead
// (NaN = missing). Rows [train_start, fit_end] drive the gradient; rows
// [valid_start, valid_end] drive early stopping on plain MSE.
inline TrainedModel train_model(const ModelSpec& spec, const Matrix& x, std::span<const double> y,
                                const Window& window, const TrainConfig& cfg) {
  cfg.validate();
  if (x.rows() != y.size()) throw ValidationError("train_model: input and target lengths differ");
  if (window.valid_end >= x.rows() || window.train_start > window.valid_start || window.valid_start > window.valid_end ||
      window.valid_start == window.train_start)
    throw ConfigError("train_model: window indices out of range");

  const std::size_t len = window.valid_end - window.train_start + 1;
  const Matrix xs = x.slice_rows(window.train_start, len);
  const std::vector<double> ys(y.begin() + static_cast<std::ptrdiff_t>(window.train_start),
                               y.begin() + static_cast<std::ptrdiff_t>(window.valid_end + 1));
  std::vector<std::size_t> fit_rows, valid_rows;
  for (std::size_t r = 0; r < len; ++r) (window.train_start + r < window.valid_start ? fit_rows : valid_rows).push_back(r);

  TrainedModel out;
  out.window = window;
  out.model = Forecaster(spec);
  out.model.initialize(cfg.seed);
  Forecaster& model = out.model;

  AdamState state(model.params().size());
  EarlyStopping<ParameterSet> stopper(cfg.patience);
  ParameterSet grad;
  ForwardTrace trace;
  Rng batch_rng(derive_seed(cfg.seed, 0xBA7C4));

  auto validation_mse = [&](const std::vector<double>& yhat) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t r : valid_rows) {
      if (std::isnan(ys[r])) continue;
      s += (ys[r] - yhat[r]) * (ys[r] - yhat[r]);
      ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
  };

  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= fit_rows.size();
  auto checked = [&](const LossBreakdown& loss, std::size_t epoch) {
    if (!std::isfinite(loss.total))
      throw NumericError("train_model(" + std::string(to_string(spec.kind)) + "): non-finite loss at epoch " +
                         std::to_string(epoch));
    return loss;
  };
  // Full batch: the forward pass that yields the next gradient also yields
  // the validation predictions for the parameters just produced.
  LossBreakdown pending;
  if (full_batch) pending = checked(loss_and_grad(model, xs, ys, fit_rows, cfg.lambda, grad, &trace), 1);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double epoch_loss = 0.0;
    double vmse = 0.0;
    if (full_batch) {
      adam_step(model.params().flat(), grad.flat(), state, cfg.adam);
      epoch_loss = pending.total;
      pending = checked(loss_and_grad(model, xs, ys, fit_rows, cfg.lambda, grad, &trace), epoch + 1);
      vmse = validation_mse(trace.yhat);
    } else {
      std::vector<std::size_t> order = fit_rows;
      batch_rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        std::span<const std::size_t> batch(order.data() + start, stop - start);
        const LossBreakdown loss = loss_and_grad(model, xs, ys, batch, cfg.lambda, grad, &trace);
        if (!std::isfinite(loss.total))
          throw NumericError("train_model: non-finite loss at epoch " + std::to_string(epoch));
        adam_step(model.params().flat(), grad.flat(), state, cfg.adam);
        epoch_loss += loss.total * static_cast<double>(batch.size()) / static_cast<double>(order.size());
      }
      vmse = validation_mse(model.predict(xs));
    }
    if (!std::isfinite(vmse))
      throw NumericError("train_model: non-finite validation error at epoch " + std::to_string(epoch));
    out.log.train_loss.push_back(epoch_loss);
    out.log.valid_mse.push_back(vmse);
    out.log.epochs_run = epoch;
    if (!stopper.observe(vmse, model.params())) break;
  }
  model.params() = stopper.best();
  out.log.best_epoch = stopper.best_check();
  return out;
}

// One-step-ahead forecast from rows 0..t of `history`: the head applied to
// the final position. Rows beyond the slice are never read.
inline double forecast_one_step(const Forecaster& model, const Matrix& history) {
  if (history.rows() == 0) throw ValidationError("forecast_one_step: empty history");
  return model.predict(history).back();
}

// Forecast for sample index `t` using rows [first, t] of the full input matrix.
inline double forecast_at(const Forecaster& model, const Matrix& x, std::size_t first, std::size_t t) {
  return forecast_one_step(model, x.slice_rows(first, t - first + 1));
}

// ---- persistence ----------------------------------------------------------

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"model", to_string(s.kind)},
          {"input_width", s.input_width},
          {"hidden1", s.hidden1},
          {"hidden2", s.hidden2},
          {"window", s.window}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.kind = parse_model_kind(j.at("model").get<std::string>());
  s.input_width = j.at("input_width").get<std::size_t>();
  s.hidden1 = j.at("hidden1").get<std::size_t>();
  s.hidden2 = j.at("hidden2").get<std::size_t>();
  s.window = j.at("window").get<std::size_t>();
  return s;
}

// Writes <prefix>.json (spec, block layout, training log) and <prefix>.csv
// (block,row,col,value with round-trip precision).
inline void save_model(const TrainedModel& tm, const std::string& prefix) {
  const ParameterSet& ps = tm.model.params();
  nlohmann::json manifest;
  manifest["spec"] = spec_to_json(tm.model.spec());
  manifest["blocks"] = nlohmann::json::array();
  for (const auto& b : ps.blocks()) manifest["blocks"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
  manifest["log"] = {{"best_epoch", tm.log.best_epoch},
                     {"epochs_run", tm.log.epochs_run},
                     {"train_loss", tm.log.train_loss},
                     {"valid_mse", tm.log.valid_mse}};
  manifest["window"] = {{"train_start", tm.window.train_start}, {"train_end", tm.window.train_end},
                        {"valid_start", tm.window.valid_start}, {"valid_end", tm.window.valid_end},
                        {"test_index", tm.window.test_index}};
  std::ofstream js(prefix + ".json");
  if (!js) throw DataError("cannot write " + prefix + ".json");
  js << manifest.dump(2) << '\n';

  std::ofstream csv(prefix + ".csv");
  if (!csv) throw DataError("cannot write " + prefix + ".csv");
  csv << "block,row,col,value\n";
  for (std::size_t i = 0; i < ps.block_count(); ++i) {
    auto v = ps.view(i);
    for (std::size_t r = 0; r < v.rows; ++r)
      for (std::size_t c = 0; c < v.cols; ++c) csv << ps.block(i).name << ',' << r << ',' << c << ',' << format_double(v(r, c)) << '\n';
  }
}

inline TrainedModel load_model(const std::string& prefix) {
  std::ifstream js(prefix + ".json");
  if (!js) throw DataError("cannot open " + prefix + ".json");
  nlohmann::json manifest = nlohmann::json::parse(js);
  TrainedModel tm;
  tm.model = Forecaster(spec_from_json(manifest.at("spec")));
  const auto& log = manifest.at("log");
  tm.log.best_epoch = log.at("best_epoch").get<std::size_t>();
  tm.log.epochs_run = log.at("epochs_run").get<std::size_t>();
  tm.log.train_loss = log.at("train_loss").get<std::vector<double>>();
  tm.log.valid_mse = log.at("valid_mse").get<std::vector<double>>();
  const auto& w = manifest.at("window");
  tm.window = {w.at("train_start"), w.at("train_end"), w.at("valid_start"), w.at("valid_end"), w.at("test_index")};

  ParameterSet& ps = tm.model.params();
  std::ifstream csv(prefix + ".csv");
  if (!csv) throw DataError("cannot open " + prefix + ".csv");
  std::string line;
  std::getline(csv, line);
  std::size_t file_row = 1;
  while (std::getline(csv, line)) {
    ++file_row;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != 4) throw FormatError("model csv: expected 4 cells", file_row, 1);
    const std::size_t b = ps.find(cells[0]);
    auto r = detail::parse_double(cells[1]), c = detail::parse_double(cells[2]), v = detail::parse_double(cells[3]);
    if (!r || !c || !v) throw FormatError("model csv: unparseable cell", file_row, 2);
    ps.view(b)(static_cast<std::size_t>(*r), static_cast<std::size_t>(*c)) = *v;
  }
  return tm;
}

}  // namespace attnprice
