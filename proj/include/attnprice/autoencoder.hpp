#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "attnprice/data.hpp"
#include "attnprice/numeric.hpp"
#include "attnprice/optim.hpp"
#include "attnprice/params.hpp"

namespace attnprice {

// Bottleneck width: round-half-up of 70% of the input width, at least one.
inline std::size_t latent_width(std::size_t n) {
  const std::size_t m = round_half_up(0.7 * static_cast<double>(n));
  return m == 0 ? 1 : m;
}

// One-hidden-layer MLP autoencoder: x = relu(W_en f + b_en), f_hat = g(W_de x + b_de).
// g defaults to ReLU; `linear` is available for panels with negative values.
class Autoencoder {
 public:
  Autoencoder() = default;

  Autoencoder(std::size_t n, std::size_t m, Activation decoder_activation = Activation::Relu)
      : n_(n), m_(m), decoder_activation_(decoder_activation) {
    w_en_ = params_.add("W_en", m, n);
    b_en_ = params_.add("b_en", m, 1);
    w_de_ = params_.add("W_de", n, m);
    b_de_ = params_.add("b_de", n, 1);
  }

  static Autoencoder for_inputs(std::size_t n, Activation decoder_activation = Activation::Relu) {
    return Autoencoder(n, attnprice::latent_width(n), decoder_activation);
  }

  void initialize(Rng& rng) {
    glorot_uniform(params_.view(w_en_), rng);
    glorot_uniform(params_.view(w_de_), rng);
    std::fill(params_.vec(b_en_).begin(), params_.vec(b_en_).end(), 0.0);
    std::fill(params_.vec(b_de_).begin(), params_.vec(b_de_).end(), 0.0);
  }

  std::size_t input_width() const noexcept { return n_; }
  std::size_t latent_width() const noexcept { return m_; }
  Activation decoder_activation() const noexcept { return decoder_activation_; }

  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }

  MutView w_en() { return params_.view(w_en_); }
  MutView w_de() { return params_.view(w_de_); }
  std::span<double> b_en() { return params_.vec(b_en_); }
  std::span<double> b_de() { return params_.vec(b_de_); }

  std::vector<double> encode(std::span<const double> f) const {
    if (f.size() != n_) throw std::invalid_argument("encode: input width mismatch");
    if (!all_finite(f)) throw NumericError("encode: non-finite input");
    auto b = params_.vec(b_en_);
    std::vector<double> x(b.begin(), b.end());
    matvec_add(params_.view(w_en_), f, x);
    for (double& v : x) v = relu(v);
    return x;
  }

  std::vector<double> decode(std::span<const double> x) const {
    if (x.size() != m_) throw std::invalid_argument("decode: latent width mismatch");
    if (!all_finite(x)) throw NumericError("decode: non-finite input");
    auto b = params_.vec(b_de_);
    std::vector<double> f(b.begin(), b.end());
    matvec_add(params_.view(w_de_), x, f);
    for (double& v : f) v = activate(decoder_activation_, v);
    return f;
  }

  std::vector<double> reconstruct(std::span<const double> f) const { return decode(encode(f)); }

  // (1/T) * sum over observed cells of (f - f_hat)^2 for the given rows of a
  // pre-filled input matrix. `observed` is row-major over `filled`.
  double masked_loss(const Matrix& filled, std::span<const std::uint8_t> observed,
                     std::span<const std::size_t> rows) const {
    double loss = 0.0;
    for (std::size_t r : rows) {
      auto fhat = reconstruct(filled.row(r));
      for (std::size_t i = 0; i < n_; ++i) {
        if (!observed[r * n_ + i]) continue;
        const double e = filled(r, i) - fhat[i];
        loss += e * e;
      }
    }
    return rows.empty() ? 0.0 : loss / static_cast<double>(rows.size());
  }

  // Loss and its gradient with respect to params(); missing cells carry no gradient.
  double masked_loss_and_grad(const Matrix& filled, std::span<const std::uint8_t> observed,
                              std::span<const std::size_t> rows, ParameterSet& grad) const {
    grad = params_.zeros_like();
    if (rows.empty()) return 0.0;
    const double inv_t = 1.0 / static_cast<double>(rows.size());
    std::vector<double> pre(m_), x(m_), dx(m_), fhat(n_), dc(n_);
    double loss = 0.0;
    for (std::size_t r : rows) {
      auto f = filled.row(r);
      auto be = params_.vec(b_en_);
      std::copy(be.begin(), be.end(), pre.begin());
      matvec_add(params_.view(w_en_), f, pre);
      for (std::size_t j = 0; j < m_; ++j) x[j] = relu(pre[j]);
      auto bd = params_.vec(b_de_);
      std::copy(bd.begin(), bd.end(), fhat.begin());
      matvec_add(params_.view(w_de_), x, fhat);
      for (std::size_t i = 0; i < n_; ++i) {
        fhat[i] = activate(decoder_activation_, fhat[i]);
        if (!observed[r * n_ + i]) {
          dc[i] = 0.0;
          continue;
        }
        const double e = fhat[i] - f[i];
        loss += e * e;
        dc[i] = 2.0 * inv_t * e * activation_grad_from_output(decoder_activation_, fhat[i]);
      }
      outer_add(grad.view(w_de_), dc, x);
      auto gbd = grad.vec(b_de_);
      for (std::size_t i = 0; i < n_; ++i) gbd[i] += dc[i];
      std::fill(dx.begin(), dx.end(), 0.0);
      matvec_t_add(params_.view(w_de_), dc, dx);
      for (std::size_t j = 0; j < m_; ++j) dx[j] *= (pre[j] > 0.0 ? 1.0 : 0.0);
      outer_add(grad.view(w_en_), dx, f);
      auto gbe = grad.vec(b_en_);
      for (std::size_t j = 0; j < m_; ++j) gbe[j] += dx[j];
    }
    return loss * inv_t;
  }

 private:
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  Activation decoder_activation_ = Activation::Relu;
  ParameterSet params_;
  std::size_t w_en_ = 0, b_en_ = 0, w_de_ = 0, b_de_ = 0;
};

// Per-column mean of observed values over `rows`; 0 for columns with none.
inline std::vector<double> observed_column_means(const Panel& panel, std::span<const std::size_t> rows) {
  std::vector<double> means(panel.cols(), 0.0);
  for (std::size_t c = 0; c < panel.cols(); ++c) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t r : rows)
      if (panel.is_observed(r, c)) {
        s += panel.values(r, c);
        ++n;
      }
    means[c] = n ? s / static_cast<double>(n) : 0.0;
  }
  return means;
}

// Panel values with missing cells replaced by the supplied column means.
inline Matrix mean_filled(const Panel& panel, std::span<const double> means) {
  Matrix out = panel.values;
  for (std::size_t r = 0; r < panel.rows(); ++r)
    for (std::size_t c = 0; c < panel.cols(); ++c)
      if (!panel.is_observed(r, c)) out(r, c) = means[c];
  return out;
}

struct PretrainConfig {
  std::size_t max_epochs = 500;
  double lr = 0.001;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double valid_frac = 0.20;
  Activation decoder_activation = Activation::Relu;
};

struct PretrainResult {
  Autoencoder model;
  Matrix latent;                      // T x m, every panel row, nonnegative
  std::vector<double> fill_means;     // in-sample observed column means
  std::vector<double> train_curve;    // masked loss on fit rows, per epoch
  std::vector<double> valid_curve;    // masked loss on held-out rows, per epoch
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

// Fits the autoencoder on rows [first, last] of the panel with full-batch
// Adam. The trailing valid_frac of those rows drives early stopping; the
// parameters with the lowest held-out masked loss are kept.
// Data-dependent bias start: every latent unit is active on every fitting
// row, and the initial reconstruction sits at the column means.
inline void center_biases(Autoencoder& ae, const Matrix& filled, std::span<const std::size_t> rows,
                          std::span<const double> column_means) {
  const std::size_t m = ae.latent_width();
  std::vector<double> lo(m, std::numeric_limits<double>::infinity()), hi(m, -lo[0]);
  std::fill(ae.b_en().begin(), ae.b_en().end(), 0.0);
  for (std::size_t r : rows) {
    std::vector<double> a(m, 0.0);
    matvec_add(ae.w_en(), filled.row(r), a);
    for (std::size_t i = 0; i < m; ++i) {
      lo[i] = std::min(lo[i], a[i]);
      hi[i] = std::max(hi[i], a[i]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) ae.b_en()[i] = -lo[i] + std::max(0.1 * (hi[i] - lo[i]), 1e-3);
  std::vector<double> x_mean(m, 0.0);
  for (std::size_t r : rows) {
    const auto x = ae.encode(filled.row(r));
    for (std::size_t i = 0; i < m; ++i) x_mean[i] += x[i] / static_cast<double>(rows.size());
  }
  std::vector<double> shift(ae.input_width(), 0.0);
  matvec_add(ae.w_de(), x_mean, shift);
  for (std::size_t j = 0; j < shift.size(); ++j) ae.b_de()[j] = column_means[j] - shift[j];
}

inline PretrainResult pretrain(const Panel& panel, std::size_t first, std::size_t last, const PretrainConfig& cfg) {
  if (panel.cols() == 0 || last >= panel.rows() || first > last)
    throw ConfigError("pretrain: invalid in-sample row range");
  std::vector<std::size_t> in_sample;
  for (std::size_t r = first; r <= last; ++r) in_sample.push_back(r);

  std::vector<std::size_t> fit_rows = in_sample, valid_rows;
  if (in_sample.size() >= 2) {
    std::size_t v = std::max<std::size_t>(1, round_half_up(cfg.valid_frac * static_cast<double>(in_sample.size())));
    v = std::min(v, in_sample.size() - 1);
    fit_rows.assign(in_sample.begin(), in_sample.end() - static_cast<std::ptrdiff_t>(v));
    valid_rows.assign(in_sample.end() - static_cast<std::ptrdiff_t>(v), in_sample.end());
  }

  PretrainResult result;
  result.fill_means = observed_column_means(panel, in_sample);
  const Matrix filled = mean_filled(panel, result.fill_means);

  Rng rng(cfg.seed);
  Autoencoder ae = Autoencoder::for_inputs(panel.cols(), cfg.decoder_activation);
  ae.initialize(rng);
  center_biases(ae, filled, fit_rows, result.fill_means);

  AdamConfig adam{cfg.lr};
  AdamState state(ae.params().size());
  EarlyStopping<ParameterSet> stopper(cfg.patience);
  ParameterSet grad;
  const auto& eval_rows = valid_rows.empty() ? fit_rows : valid_rows;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double loss = ae.masked_loss_and_grad(filled, panel.observed, fit_rows, grad);
    if (!std::isfinite(loss)) throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
    adam_step(ae.params().flat(), grad.flat(), state, adam);
    const double vloss = ae.masked_loss(filled, panel.observed, eval_rows);
    if (!std::isfinite(vloss))
      throw NumericError("pretrain: non-finite validation loss at epoch " + std::to_string(epoch));
    result.train_curve.push_back(loss);
    result.valid_curve.push_back(vloss);
    result.epochs_run = epoch;
    if (!stopper.observe(vloss, ae.params())) break;
  }
  if (stopper.has_best()) {
    ae.params() = stopper.best();
    result.best_epoch = stopper.best_check();
  }

  result.latent = Matrix(panel.rows(), ae.latent_width());
  for (std::size_t r = 0; r < panel.rows(); ++r) {
    auto x = ae.encode(filled.row(r));
    std::copy(x.begin(), x.end(), result.latent.row(r).begin());
  }
  result.model = std::move(ae);
  return result;
}

// Observed cells are kept; missing cells take the reconstruction of the
// mean-filled row at the same position.
inline Panel impute_missing(const Panel& panel, const Autoencoder& ae, std::span<const double> fill_means) {
  Panel out = panel;
  const Matrix filled = mean_filled(panel, fill_means);
  for (std::size_t r = 0; r < panel.rows(); ++r) {
    bool any_missing = false;
    for (std::size_t c = 0; c < panel.cols(); ++c) any_missing |= !panel.is_observed(r, c);
    if (!any_missing) continue;
    auto fhat = ae.reconstruct(filled.row(r));
    for (std::size_t c = 0; c < panel.cols(); ++c)
      if (!panel.is_observed(r, c)) out.values(r, c) = fhat[c];
  }
  std::fill(out.observed.begin(), out.observed.end(), std::uint8_t{1});
  return out;
}

// Maps each column's observed in-sample range onto [0, 1] so a ReLU decoder
// can reproduce it. Constant columns are shifted only.
struct RangeScaler {
  std::vector<double> low;
  std::vector<double> width;

  static RangeScaler fit(const Panel& panel, std::size_t first, std::size_t last) {
    RangeScaler s;
    s.low.assign(panel.cols(), 0.0);
    s.width.assign(panel.cols(), 1.0);
    for (std::size_t c = 0; c < panel.cols(); ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t r = first; r <= last; ++r)
        if (panel.is_observed(r, c)) {
          lo = std::min(lo, panel.values(r, c));
          hi = std::max(hi, panel.values(r, c));
        }
      if (!std::isfinite(lo)) continue;
      s.low[c] = lo;
      s.width[c] = hi - lo > 1e-12 ? hi - lo : 1.0;
    }
    return s;
  }

  Panel apply(const Panel& panel) const {
    Panel out = panel;
    for (std::size_t r = 0; r < panel.rows(); ++r)
      for (std::size_t c = 0; c < panel.cols(); ++c)
        if (panel.is_observed(r, c)) out.values(r, c) = (panel.values(r, c) - low[c]) / width[c];
    return out;
  }
};

// Column z-scores with statistics taken from rows [first, last]. Columns
// with zero in-sample spread are centred only.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Matrix& x, std::size_t first, std::size_t last) {
    Standardizer s;
    s.mean.assign(x.cols(), 0.0);
    s.scale.assign(x.cols(), 1.0);
    const double n = static_cast<double>(last - first + 1);
    for (std::size_t c = 0; c < x.cols(); ++c) {
      double m = 0.0;
      for (std::size_t r = first; r <= last; ++r) m += x(r, c);
      m /= n;
      double ss = 0.0;
      for (std::size_t r = first; r <= last; ++r) ss += (x(r, c) - m) * (x(r, c) - m);
      const double sd = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      s.mean[c] = m;
      s.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    Matrix out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / scale[c];
    return out;
  }
};

}  // namespace attnprice
