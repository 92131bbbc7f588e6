#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnprice/attention.hpp"
#include "attnprice/error.hpp"
#include "attnprice/params.hpp"
#include "attnprice/recurrent.hpp"

namespace attnprice {

enum class ModelKind { RNN, LSTM, GRU, Batt, LD, LG, LC, SelfAtt, SparseAtt };

inline constexpr std::array<ModelKind, 9> kAllModels{ModelKind::RNN,  ModelKind::LSTM, ModelKind::GRU,
                                                     ModelKind::Batt, ModelKind::LD,   ModelKind::LG,
                                                     ModelKind::LC,   ModelKind::SelfAtt, ModelKind::SparseAtt};

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::RNN: return "RNN";
    case ModelKind::LSTM: return "LSTM";
    case ModelKind::GRU: return "GRU";
    case ModelKind::Batt: return "Batt";
    case ModelKind::LD: return "LD";
    case ModelKind::LG: return "LG";
    case ModelKind::LC: return "LC";
    case ModelKind::SelfAtt: return "self_att";
    case ModelKind::SparseAtt: return "sparse_att";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  for (ModelKind k : kAllModels)
    if (s == to_string(k)) return k;
  throw ConfigError("unknown model '" + std::string(s) + "'");
}

inline std::optional<AttentionKind> attention_of(ModelKind k) {
  switch (k) {
    case ModelKind::Batt: return AttentionKind::Batt;
    case ModelKind::LD: return AttentionKind::LD;
    case ModelKind::LG: return AttentionKind::LG;
    case ModelKind::LC: return AttentionKind::LC;
    case ModelKind::SelfAtt: return AttentionKind::SelfAtt;
    case ModelKind::SparseAtt: return AttentionKind::SparseAtt;
    default: return std::nullopt;
  }
}

inline CoreKind core_of(ModelKind k) {
  if (k == ModelKind::LSTM) return CoreKind::Lstm;
  if (k == ModelKind::GRU) return CoreKind::Gru;
  return CoreKind::Rnn;
}

struct ModelSpec {
  ModelKind kind = ModelKind::RNN;
  std::size_t input_width = 1;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  std::size_t window = 4;  // sparse attention only

  bool operator==(const ModelSpec&) const = default;
};

// Everything a forward pass produces that backward() needs.
struct ForwardTrace {
  CoreCache core;
  AttentionCache attention;
  std::vector<double> yhat;  // one prediction per input row

  // z_t for attention models, h2_t otherwise.
  const Matrix& features(bool has_attention) const { return has_attention ? attention.z : core.output(); }
};

// Two-layer recurrent core, optional causal attention layer, linear head.
// yhat_t = W_y v_t + b_y with v_t = z_t (attention) or h2_t.
class Forecaster {
 public:
  Forecaster() = default;

  explicit Forecaster(const ModelSpec& spec) : spec_(spec) {
    if (spec.input_width == 0 || spec.hidden1 == 0 || spec.hidden2 == 0)
      throw ConfigError("model: widths must be positive");
    core_ = RecurrentCore(core_of(spec.kind), params_, spec.input_width, spec.hidden1, spec.hidden2);
    if (auto a = attention_of(spec.kind)) attention_ = AttentionLayer(*a, params_, spec.hidden2, spec.window);
    head_w_ = params_.add("W_y", 1, spec.hidden2);
    head_b_ = params_.add("b_y", 1, 1);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  bool has_attention() const noexcept { return attention_of(spec_.kind).has_value(); }
  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }
  const RecurrentCore& core() const noexcept { return core_; }
  const AttentionLayer& attention() const noexcept { return attention_; }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    core_.initialize(params_, rng);
    if (has_attention()) attention_.initialize(params_, rng);
    glorot_uniform(params_.view(head_w_), rng);
    params_.vec(head_b_)[0] = 0.0;
  }

  void forward(const Matrix& x, ForwardTrace& trace) const {
    core_.forward(params_, x, trace.core);
    if (has_attention()) attention_.forward(params_, trace.core.output(), trace.attention);
    const Matrix& feat = trace.features(has_attention());
    trace.yhat.assign(x.rows(), params_.vec(head_b_)[0]);
    auto w = params_.vec(head_w_);
    for (std::size_t t = 0; t < x.rows(); ++t) trace.yhat[t] += dot(w, feat.row(t));
  }

  std::vector<double> predict(const Matrix& x) const {
    ForwardTrace trace;
    forward(x, trace);
    return std::move(trace.yhat);
  }

  // Gradient of sum_t dyhat[t] * yhat[t] with respect to the parameters,
  // accumulated into `grad` (which must share the parameter layout).
  void backward(const Matrix& x, const ForwardTrace& trace, std::span<const double> dyhat, ParameterSet& grad) const {
    const Matrix& feat = trace.features(has_attention());
    const std::size_t T = x.rows();
    auto w = params_.vec(head_w_);
    auto gw = grad.vec(head_w_);
    Matrix dfeat(T, spec_.hidden2);
    for (std::size_t t = 0; t < T; ++t) {
      if (dyhat[t] == 0.0) continue;
      grad.vec(head_b_)[0] += dyhat[t];
      for (std::size_t c = 0; c < spec_.hidden2; ++c) {
        gw[c] += dyhat[t] * feat(t, c);
        dfeat(t, c) = dyhat[t] * w[c];
      }
    }
    if (has_attention()) {
      Matrix dh = attention_.backward(params_, trace.core.output(), trace.attention, dfeat, grad);
      core_.backward(params_, x, trace.core, dh, grad);
    } else {
      core_.backward(params_, x, trace.core, dfeat, grad);
    }
  }

 private:
  ModelSpec spec_;
  ParameterSet params_;
  RecurrentCore core_;
  AttentionLayer attention_;
  std::size_t head_w_ = 0, head_b_ = 0;
};

// Mean squared error over `rows` (skipping NaN targets) plus lambda * ||theta||_1.
struct LossBreakdown {
  double mse = 0.0;
  double l1 = 0.0;
  double total = 0.0;
  std::size_t count = 0;
};

inline LossBreakdown regularized_loss(std::span<const double> y, std::span<const double> yhat,
                                      std::span<const std::size_t> rows, const ParameterSet& params, double lambda) {
  LossBreakdown out;
  for (std::size_t r : rows) {
    if (std::isnan(y[r])) continue;
    const double e = y[r] - yhat[r];
    out.mse += e * e;
    ++out.count;
  }
  if (out.count) out.mse /= static_cast<double>(out.count);
  out.l1 = lambda > 0.0 ? lambda * params.l1_norm() : 0.0;
  out.total = out.mse + out.l1;
  return out;
}

// Plain-vector form: (1/T) sum (y - yhat)^2 + lambda * sum |w|.
inline double mse_l1_loss(std::span<const double> y, std::span<const double> yhat, std::span<const double> weights,
                          double lambda) {
  if (y.size() != yhat.size()) throw ValidationError("loss: length mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) s += (y[t] - yhat[t]) * (y[t] - yhat[t]);
  double l1 = 0.0;
  for (double w : weights) l1 += std::abs(w);
  return (y.empty() ? 0.0 : s / static_cast<double>(y.size())) + lambda * l1;
}

// Regularized loss on `rows` and its gradient; the L1 subgradient at 0 is 0.
inline LossBreakdown loss_and_grad(const Forecaster& model, const Matrix& x, std::span<const double> y,
                                   std::span<const std::size_t> rows, double lambda, ParameterSet& grad,
                                   ForwardTrace* trace_out = nullptr) {
  ForwardTrace local;
  ForwardTrace& trace = trace_out ? *trace_out : local;
  model.forward(x, trace);
  LossBreakdown loss = regularized_loss(y, trace.yhat, rows, model.params(), lambda);
  grad = model.params().zeros_like();
  std::vector<double> dyhat(x.rows(), 0.0);
  if (loss.count) {
    const double scale = 2.0 / static_cast<double>(loss.count);
    for (std::size_t r : rows)
      if (!std::isnan(y[r])) dyhat[r] = scale * (trace.yhat[r] - y[r]);
  }
  model.backward(x, trace, dyhat, grad);
  if (lambda > 0.0) {
    auto p = model.params().flat();
    auto g = grad.flat();
    for (std::size_t i = 0; i < p.size(); ++i) g[i] += lambda * ((p[i] > 0.0) - (p[i] < 0.0));
  }
  return loss;
}

}  // namespace attnprice
