#pragma once

#include <array>
#include <string>
#include <vector>

#include "attnprice/numeric.hpp"
#include "attnprice/params.hpp"

namespace attnprice {

enum class CoreKind { Rnn, Lstm, Gru };

// Per-layer forward state kept for backpropagation through time. Only the
// matrices the layer kind uses are populated.
struct LayerCache {
  Matrix h;  // T x out
  // LSTM: gates[0..3] = input, forget, output, candidate; cell = c_t.
  // GRU:  gates[0..2] = update, reset, candidate.
  std::array<Matrix, 4> gates;
  Matrix cell;
};

// One recurrent layer. Parameters live in a shared ParameterSet; the layer
// only remembers block indices.
class RecurrentLayer {
 public:
  RecurrentLayer() = default;

  RecurrentLayer(CoreKind kind, ParameterSet& ps, const std::string& tag, std::size_t in, std::size_t out)
      : kind_(kind), in_(in), out_(out) {
    static const std::array<const char*, 1> rnn{"x"};
    static const std::array<const char*, 4> lstm{"i", "f", "o", "c"};
    static const std::array<const char*, 3> gru{"up", "re", "h"};
    auto add_gate = [&](const std::string& g) {
      if (kind == CoreKind::Rnn) {
        w_.push_back(ps.add("W_x" + tag, out, in));
        u_.push_back(ps.add("W_h" + tag, out, out));
        b_.push_back(ps.add("b_rnn" + tag, out, 1));
      } else {
        w_.push_back(ps.add("W_" + g + tag, out, in));
        u_.push_back(ps.add("U_" + g + tag, out, out));
        b_.push_back(ps.add("b_" + g + tag, out, 1));
      }
    };
    switch (kind) {
      case CoreKind::Rnn: for (auto g : rnn) add_gate(g); break;
      case CoreKind::Lstm: for (auto g : lstm) add_gate(g); break;
      case CoreKind::Gru: for (auto g : gru) add_gate(g); break;
    }
  }

  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }
  CoreKind kind() const noexcept { return kind_; }

  std::size_t input_block(std::size_t gate) const { return w_.at(gate); }
  std::size_t recurrent_block(std::size_t gate) const { return u_.at(gate); }
  std::size_t bias_block(std::size_t gate) const { return b_.at(gate); }
  std::size_t gate_count() const noexcept { return w_.size(); }

  void initialize(ParameterSet& ps, Rng& rng) const {
    for (std::size_t g = 0; g < w_.size(); ++g) {
      glorot_uniform(ps.view(w_[g]), rng);
      glorot_uniform(ps.view(u_[g]), rng);
      auto b = ps.vec(b_[g]);
      std::fill(b.begin(), b.end(), 0.0);
    }
  }

  void forward(const ParameterSet& ps, const Matrix& x, LayerCache& cache) const {
    const std::size_t T = x.rows();
    cache.h = Matrix(T, out_);
    const std::vector<double> zero(out_, 0.0);
    switch (kind_) {
      case CoreKind::Rnn:
        for (std::size_t t = 0; t < T; ++t) {
          auto h = cache.h.row(t);
          pre_activation(ps, 0, x.row(t), t ? cache.h.row(t - 1) : std::span<const double>(zero), h);
          for (double& v : h) v = std::tanh(v);
        }
        break;
      case CoreKind::Lstm: {
        for (auto& g : cache.gates) g = Matrix(T, out_);
        cache.cell = Matrix(T, out_);
        for (std::size_t t = 0; t < T; ++t) {
          auto h_prev = t ? cache.h.row(t - 1) : std::span<const double>(zero);
          auto c_prev = t ? cache.cell.row(t - 1) : std::span<const double>(zero);
          for (std::size_t g = 0; g < 4; ++g) {
            auto a = cache.gates[g].row(t);
            pre_activation(ps, g, x.row(t), h_prev, a);
            for (double& v : a) v = (g == 3) ? std::tanh(v) : sigmoid(v);
          }
          auto i = cache.gates[0].row(t), f = cache.gates[1].row(t), o = cache.gates[2].row(t),
               cand = cache.gates[3].row(t);
          auto c = cache.cell.row(t);
          auto h = cache.h.row(t);
          for (std::size_t k = 0; k < out_; ++k) {
            c[k] = f[k] * c_prev[k] + i[k] * cand[k];
            h[k] = o[k] * std::tanh(c[k]);
          }
        }
        break;
      }
      case CoreKind::Gru: {
        for (std::size_t g = 0; g < 3; ++g) cache.gates[g] = Matrix(T, out_);
        std::vector<double> reset_h(out_);
        for (std::size_t t = 0; t < T; ++t) {
          auto h_prev = t ? cache.h.row(t - 1) : std::span<const double>(zero);
          auto up = cache.gates[0].row(t), re = cache.gates[1].row(t), cand = cache.gates[2].row(t);
          pre_activation(ps, 0, x.row(t), h_prev, up);
          pre_activation(ps, 1, x.row(t), h_prev, re);
          for (double& v : up) v = sigmoid(v);
          for (double& v : re) v = sigmoid(v);
          for (std::size_t k = 0; k < out_; ++k) reset_h[k] = re[k] * h_prev[k];
          pre_activation(ps, 2, x.row(t), reset_h, cand);
          for (double& v : cand) v = std::tanh(v);
          auto h = cache.h.row(t);
          for (std::size_t k = 0; k < out_; ++k) h[k] = (1.0 - up[k]) * h_prev[k] + up[k] * cand[k];
        }
        break;
      }
    }
  }

  // Accumulates parameter gradients into `grad` given dL/dh for every step;
  // writes dL/dx into `dx` when provided.
  void backward(const ParameterSet& ps, const Matrix& x, const LayerCache& cache, const Matrix& dh_out,
                ParameterSet& grad, Matrix* dx) const {
    const std::size_t T = x.rows();
    if (dx) *dx = Matrix(T, in_);
    const std::vector<double> zero(out_, 0.0);
    std::vector<double> dh(out_), dh_next(out_, 0.0), dc_next(out_, 0.0);
    std::array<std::vector<double>, 4> dpre;
    for (auto& v : dpre) v.assign(out_, 0.0);
    std::vector<double> tmp(out_);

    for (std::size_t t = T; t-- > 0;) {
      auto h_prev = t ? cache.h.row(t - 1) : std::span<const double>(zero);
      for (std::size_t k = 0; k < out_; ++k) dh[k] = dh_out(t, k) + dh_next[k];
      std::fill(dh_next.begin(), dh_next.end(), 0.0);

      switch (kind_) {
        case CoreKind::Rnn: {
          auto h = cache.h.row(t);
          for (std::size_t k = 0; k < out_; ++k) dpre[0][k] = dh[k] * (1.0 - h[k] * h[k]);
          accumulate(ps, grad, 0, dpre[0], x.row(t), h_prev, t > 0, dh_next, dx ? dx->row(t) : std::span<double>{});
          break;
        }
        case CoreKind::Lstm: {
          auto i = cache.gates[0].row(t), f = cache.gates[1].row(t), o = cache.gates[2].row(t),
               cand = cache.gates[3].row(t);
          auto c = cache.cell.row(t);
          auto c_prev = t ? cache.cell.row(t - 1) : std::span<const double>(zero);
          for (std::size_t k = 0; k < out_; ++k) {
            const double tc = std::tanh(c[k]);
            const double d_o = dh[k] * tc;
            const double dc = dh[k] * o[k] * (1.0 - tc * tc) + dc_next[k];
            dpre[0][k] = dc * cand[k] * i[k] * (1.0 - i[k]);
            dpre[1][k] = dc * c_prev[k] * f[k] * (1.0 - f[k]);
            dpre[2][k] = d_o * o[k] * (1.0 - o[k]);
            dpre[3][k] = dc * i[k] * (1.0 - cand[k] * cand[k]);
            dc_next[k] = dc * f[k];
          }
          for (std::size_t g = 0; g < 4; ++g)
            accumulate(ps, grad, g, dpre[g], x.row(t), h_prev, t > 0, dh_next,
                       dx ? dx->row(t) : std::span<double>{});
          break;
        }
        case CoreKind::Gru: {
          auto up = cache.gates[0].row(t), re = cache.gates[1].row(t), cand = cache.gates[2].row(t);
          // candidate path: pre_n = W_h x + U_h (re * h_prev) + b_h
          for (std::size_t k = 0; k < out_; ++k) {
            dpre[2][k] = dh[k] * up[k] * (1.0 - cand[k] * cand[k]);
            dpre[0][k] = dh[k] * (cand[k] - h_prev[k]) * up[k] * (1.0 - up[k]);
            dh_next[k] = dh[k] * (1.0 - up[k]);
            tmp[k] = re[k] * h_prev[k];
          }
          outer_add(grad.view(w_[2]), dpre[2], x.row(t));
          outer_add(grad.view(u_[2]), dpre[2], tmp);
          add_into(grad.vec(b_[2]), dpre[2]);
          if (dx) matvec_t_add(ps.view(w_[2]), dpre[2], dx->row(t));
          std::fill(tmp.begin(), tmp.end(), 0.0);
          matvec_t_add(ps.view(u_[2]), dpre[2], tmp);  // d(re * h_prev)
          for (std::size_t k = 0; k < out_; ++k) {
            dpre[1][k] = tmp[k] * h_prev[k] * re[k] * (1.0 - re[k]);
            dh_next[k] += tmp[k] * re[k];
          }
          accumulate(ps, grad, 0, dpre[0], x.row(t), h_prev, t > 0, dh_next, dx ? dx->row(t) : std::span<double>{});
          accumulate(ps, grad, 1, dpre[1], x.row(t), h_prev, t > 0, dh_next, dx ? dx->row(t) : std::span<double>{});
          break;
        }
      }
    }
  }

 private:
  // out = W_g x + U_g h_prev + b_g
  void pre_activation(const ParameterSet& ps, std::size_t g, std::span<const double> x, std::span<const double> h_prev,
                      std::span<double> out) const {
    auto b = ps.vec(b_[g]);
    std::copy(b.begin(), b.end(), out.begin());
    matvec_add(ps.view(w_[g]), x, out);
    matvec_add(ps.view(u_[g]), h_prev, out);
  }

  static void add_into(std::span<double> dst, std::span<const double> src) {
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }

  // Gradient contributions of one gate's pre-activation at one step.
  void accumulate(const ParameterSet& ps, ParameterSet& grad, std::size_t g, std::span<const double> dpre,
                  std::span<const double> x, std::span<const double> h_prev, bool has_prev, std::span<double> dh_prev,
                  std::span<double> dx) const {
    outer_add(grad.view(w_[g]), dpre, x);
    if (has_prev) outer_add(grad.view(u_[g]), dpre, h_prev);
    add_into(grad.vec(b_[g]), dpre);
    matvec_t_add(ps.view(u_[g]), dpre, dh_prev);
    if (!dx.empty()) matvec_t_add(ps.view(w_[g]), dpre, dx);
  }

  CoreKind kind_ = CoreKind::Rnn;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::vector<std::size_t> w_, u_, b_;
};

struct CoreCache {
  LayerCache layer1;
  LayerCache layer2;
  const Matrix& output() const { return layer2.h; }
};

// Two stacked recurrent layers (default widths 64 and 32) with zero initial
// states. Row t of the output depends only on input rows 0..t.
class RecurrentCore {
 public:
  RecurrentCore() = default;

  RecurrentCore(CoreKind kind, ParameterSet& ps, std::size_t d_in, std::size_t d1, std::size_t d2)
      : kind_(kind), layer1_(kind, ps, "1", d_in, d1), layer2_(kind, ps, "2", d1, d2) {}

  CoreKind kind() const noexcept { return kind_; }
  const RecurrentLayer& layer1() const noexcept { return layer1_; }
  const RecurrentLayer& layer2() const noexcept { return layer2_; }
  std::size_t output_width() const noexcept { return layer2_.out(); }

  void initialize(ParameterSet& ps, Rng& rng) const {
    layer1_.initialize(ps, rng);
    layer2_.initialize(ps, rng);
  }

  void forward(const ParameterSet& ps, const Matrix& x, CoreCache& cache) const {
    if (x.cols() != layer1_.in()) throw std::invalid_argument("recurrent core: input width mismatch");
    if (!all_finite(x.flat())) throw NumericError("recurrent core: non-finite input");
    layer1_.forward(ps, x, cache.layer1);
    layer2_.forward(ps, cache.layer1.h, cache.layer2);
  }

  Matrix forward(const ParameterSet& ps, const Matrix& x) const {
    CoreCache cache;
    forward(ps, x, cache);
    return std::move(cache.layer2.h);
  }

  void backward(const ParameterSet& ps, const Matrix& x, const CoreCache& cache, const Matrix& d_out,
                ParameterSet& grad) const {
    Matrix d_h1;
    layer2_.backward(ps, cache.layer1.h, cache.layer2, d_out, grad, &d_h1);
    layer1_.backward(ps, x, cache.layer1, d_h1, grad, nullptr);
  }

 private:
  CoreKind kind_ = CoreKind::Rnn;
  RecurrentLayer layer1_;
  RecurrentLayer layer2_;
};

}  // namespace attnprice
