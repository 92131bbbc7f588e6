#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "attnprice/numeric.hpp"
#include "attnprice/params.hpp"

namespace attnprice {

// Batt: additive.  LD/LG/LC: Luong dot, general, concat.
// SelfAtt: global scaled dot-product with a value projection.
// SparseAtt: SelfAtt restricted to a trailing window of w steps.
enum class AttentionKind { Batt, LD, LG, LC, SelfAtt, SparseAtt };

inline const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::Batt: return "Batt";
    case AttentionKind::LD: return "LD";
    case AttentionKind::LG: return "LG";
    case AttentionKind::LC: return "LC";
    case AttentionKind::SelfAtt: return "self_att";
    case AttentionKind::SparseAtt: return "sparse_att";
  }
  return "?";
}

// Index range [first, t] a query at step t may attend to: the current step
// plus w - 1 predecessors, clipped at the sequence start. w >= T makes this
// the full causal prefix.
struct Support {
  std::size_t first;
  std::size_t last;
  std::size_t size() const { return last - first + 1; }
};

inline Support sparse_support(std::size_t t, std::size_t window) {
  if (window == 0) throw std::invalid_argument("sparse_support: window must be >= 1");
  const std::size_t first = t + 1 >= window ? t + 1 - window : 0;
  return {first, t};
}

inline std::vector<std::size_t> sparse_support_set(std::size_t t, std::size_t window) {
  const Support s = sparse_support(t, window);
  std::vector<std::size_t> out;
  for (std::size_t j = s.first; j <= s.last; ++j) out.push_back(j);
  return out;
}

struct AttentionCache {
  Matrix weights;  // T x T, row t nonzero only on its support
  Matrix z;        // T x d context vectors
  Matrix q, k, v;  // projections, populated per mechanism
  Matrix g;        // LG: W h_j
  std::size_t score_evaluations = 0;
};

// Causal attention over a hidden sequence H (T x d).
class AttentionLayer {
 public:
  AttentionLayer() = default;

  AttentionLayer(AttentionKind kind, ParameterSet& ps, std::size_t d, std::size_t window = 4)
      : kind_(kind), d_(d), window_(window), scale_(1.0 / std::sqrt(static_cast<double>(d))) {
    if (kind == AttentionKind::SparseAtt && window == 0) throw std::invalid_argument("sparse attention: window >= 1");
    switch (kind) {
      case AttentionKind::Batt:
        wq_ = ps.add("W_q", d, d);
        wk_ = ps.add("W_k", d, d);
        v_ = ps.add("v", d, 1);
        break;
      case AttentionKind::LD: break;
      case AttentionKind::LG: w_ = ps.add("W", d, d); break;
      case AttentionKind::LC:
        wq_ = ps.add("W_q", d, d);
        wk_ = ps.add("W_k", d, d);
        v_ = ps.add("v", 2 * d, 1);
        break;
      case AttentionKind::SelfAtt:
      case AttentionKind::SparseAtt:
        wq_ = ps.add("W_q", d, d);
        wk_ = ps.add("W_k", d, d);
        wv_ = ps.add("W_v", d, d);
        break;
    }
  }

  AttentionKind kind() const noexcept { return kind_; }
  std::size_t width() const noexcept { return d_; }
  std::size_t window() const noexcept { return window_; }

  void initialize(ParameterSet& ps, Rng& rng) const {
    for (std::size_t b : {wq_, wk_, wv_, w_})
      if (b != npos) glorot_uniform(ps.view(b), rng);
    if (v_ != npos) {
      // Treat v as a 1 x len row vector for the fan computation.
      auto view = ps.view(v_);
      glorot_uniform({view.data, 1, view.rows}, rng);
    }
  }

  Support support(std::size_t t) const {
    if (kind_ == AttentionKind::SparseAtt) return sparse_support(t, window_);
    return {0, t};
  }

  // Masked score matrix e(t, j); kMasked outside each row's support.
  Matrix scores(const ParameterSet& ps, const Matrix& h) const {
    AttentionCache cache;
    project(ps, h, cache);
    const std::size_t T = h.rows();
    Matrix e(T, T, kMasked);
    for (std::size_t t = 0; t < T; ++t) {
      const Support s = support(t);
      for (std::size_t j = s.first; j <= s.last; ++j) e(t, j) = score(ps, h, cache, t, j);
    }
    return e;
  }

  void forward(const ParameterSet& ps, const Matrix& h, AttentionCache& cache) const {
    if (h.cols() != d_) throw std::invalid_argument("attention: hidden width mismatch");
    const std::size_t T = h.rows();
    project(ps, h, cache);
    cache.weights = Matrix(T, T);
    cache.z = Matrix(T, d_);
    cache.score_evaluations = 0;
    const Matrix& values = uses_value_projection() ? cache.v : h;
    std::vector<double> row;
    for (std::size_t t = 0; t < T; ++t) {
      const Support s = support(t);
      row.resize(s.size());
      for (std::size_t j = s.first; j <= s.last; ++j) row[j - s.first] = score(ps, h, cache, t, j);
      cache.score_evaluations += s.size();
      masked_softmax_inplace(row);
      auto z = cache.z.row(t);
      for (std::size_t j = s.first; j <= s.last; ++j) {
        const double a = row[j - s.first];
        cache.weights(t, j) = a;
        auto u = values.row(j);
        for (std::size_t c = 0; c < d_; ++c) z[c] += a * u[c];
      }
    }
  }

  // Given dL/dz, accumulates parameter gradients and returns dL/dH.
  Matrix backward(const ParameterSet& ps, const Matrix& h, const AttentionCache& cache, const Matrix& dz,
                  ParameterSet& grad) const {
    const std::size_t T = h.rows();
    const bool projected_values = uses_value_projection();
    const Matrix& values = projected_values ? cache.v : h;
    Matrix dh(T, d_);
    Matrix dvalues(T, d_);
    Matrix dq(T, d_), dk(T, d_), dg(T, d_);
    std::vector<double> tq(T, 0.0), tk(T, 0.0), dtq(T, 0.0), dtk(T, 0.0);
    if (kind_ == AttentionKind::LC) lc_terms(ps, cache, tq, tk);

    std::vector<double> dalpha;
    std::vector<double> tanh_buf(d_);
    for (std::size_t t = 0; t < T; ++t) {
      const Support s = support(t);
      dalpha.assign(s.size(), 0.0);
      double weighted = 0.0;
      for (std::size_t j = s.first; j <= s.last; ++j) {
        const double a = cache.weights(t, j);
        const double da = dot(dz.row(t), values.row(j));
        dalpha[j - s.first] = da;
        weighted += a * da;
        auto dv = dvalues.row(j);
        for (std::size_t c = 0; c < d_; ++c) dv[c] += a * dz(t, c);
      }
      for (std::size_t j = s.first; j <= s.last; ++j) {
        const double de = cache.weights(t, j) * (dalpha[j - s.first] - weighted);
        if (de == 0.0) continue;
        switch (kind_) {
          case AttentionKind::Batt: {
            auto vv = ps.vec(v_);
            auto gv = grad.vec(v_);
            for (std::size_t c = 0; c < d_; ++c) {
              const double a = std::tanh(cache.q(t, c) + cache.k(j, c));
              gv[c] += de * a;
              const double dpre = de * vv[c] * (1.0 - a * a);
              dq(t, c) += dpre;
              dk(j, c) += dpre;
            }
            break;
          }
          case AttentionKind::LD:
            for (std::size_t c = 0; c < d_; ++c) {
              dh(t, c) += de * scale_ * h(j, c);
              dh(j, c) += de * scale_ * h(t, c);
            }
            break;
          case AttentionKind::LG:
            for (std::size_t c = 0; c < d_; ++c) {
              dh(t, c) += de * scale_ * cache.g(j, c);
              dg(j, c) += de * scale_ * h(t, c);
            }
            break;
          case AttentionKind::LC:
            dtq[t] += de;
            dtk[j] += de;
            break;
          case AttentionKind::SelfAtt:
          case AttentionKind::SparseAtt:
            for (std::size_t c = 0; c < d_; ++c) {
              dq(t, c) += de * scale_ * cache.k(j, c);
              dk(j, c) += de * scale_ * cache.q(t, c);
            }
            break;
        }
      }
    }

    if (kind_ == AttentionKind::LC) {
      // e = v[:d] . tanh(q_t) + v[d:] . tanh(k_j)
      auto vv = ps.vec(v_);
      auto gv = grad.vec(v_);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < d_; ++c) {
          const double aq = std::tanh(cache.q(t, c));
          const double ak = std::tanh(cache.k(t, c));
          gv[c] += dtq[t] * aq;
          gv[d_ + c] += dtk[t] * ak;
          dq(t, c) += dtq[t] * vv[c] * (1.0 - aq * aq);
          dk(t, c) += dtk[t] * vv[d_ + c] * (1.0 - ak * ak);
        }
    }

    if (kind_ == AttentionKind::LG)
      for (std::size_t j = 0; j < T; ++j) {
        outer_add(grad.view(w_), dg.row(j), h.row(j));
        matvec_t_add(ps.view(w_), dg.row(j), dh.row(j));
      }
    if (wq_ != npos)
      for (std::size_t t = 0; t < T; ++t) {
        outer_add(grad.view(wq_), dq.row(t), h.row(t));
        matvec_t_add(ps.view(wq_), dq.row(t), dh.row(t));
        outer_add(grad.view(wk_), dk.row(t), h.row(t));
        matvec_t_add(ps.view(wk_), dk.row(t), dh.row(t));
      }
    if (projected_values) {
      for (std::size_t j = 0; j < T; ++j) {
        outer_add(grad.view(wv_), dvalues.row(j), h.row(j));
        matvec_t_add(ps.view(wv_), dvalues.row(j), dh.row(j));
      }
    } else {
      for (std::size_t i = 0; i < dh.flat().size(); ++i) dh.flat()[i] += dvalues.flat()[i];
    }
    return dh;
  }

  bool uses_value_projection() const {
    return kind_ == AttentionKind::SelfAtt || kind_ == AttentionKind::SparseAtt;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void project(const ParameterSet& ps, const Matrix& h, AttentionCache& cache) const {
    if (wq_ != npos) cache.q = project_rows(ps.view(wq_), h);
    if (wk_ != npos) cache.k = project_rows(ps.view(wk_), h);
    if (wv_ != npos) cache.v = project_rows(ps.view(wv_), h);
    if (w_ != npos) cache.g = project_rows(ps.view(w_), h);
  }

  void lc_terms(const ParameterSet& ps, const AttentionCache& cache, std::vector<double>& tq,
                std::vector<double>& tk) const {
    auto vv = ps.vec(v_);
    for (std::size_t t = 0; t < cache.q.rows(); ++t) {
      double a = 0.0, b = 0.0;
      for (std::size_t c = 0; c < d_; ++c) {
        a += vv[c] * std::tanh(cache.q(t, c));
        b += vv[d_ + c] * std::tanh(cache.k(t, c));
      }
      tq[t] = a;
      tk[t] = b;
    }
  }

  double score(const ParameterSet& ps, const Matrix& h, const AttentionCache& cache, std::size_t t,
               std::size_t j) const {
    switch (kind_) {
      case AttentionKind::Batt: {
        auto vv = ps.vec(v_);
        double e = 0.0;
        for (std::size_t c = 0; c < d_; ++c) e += vv[c] * std::tanh(cache.q(t, c) + cache.k(j, c));
        return e;
      }
      case AttentionKind::LD: return scale_ * dot(h.row(t), h.row(j));
      case AttentionKind::LG: return scale_ * dot(h.row(t), cache.g.row(j));
      case AttentionKind::LC: {
        auto vv = ps.vec(v_);
        double e = 0.0;
        for (std::size_t c = 0; c < d_; ++c) e += vv[c] * std::tanh(cache.q(t, c));
        for (std::size_t c = 0; c < d_; ++c) e += vv[d_ + c] * std::tanh(cache.k(j, c));
        return e;
      }
      case AttentionKind::SelfAtt:
      case AttentionKind::SparseAtt: return scale_ * dot(cache.q.row(t), cache.k.row(j));
    }
    return 0.0;
  }

  AttentionKind kind_ = AttentionKind::LD;
  std::size_t d_ = 0;
  std::size_t window_ = 4;
  double scale_ = 1.0;
  std::size_t wq_ = npos, wk_ = npos, wv_ = npos, w_ = npos, v_ = npos;
};

}  // namespace attnprice
