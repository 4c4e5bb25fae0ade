#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "gbrep/tensor.hpp"

namespace gbrep {

using VarId = std::int32_t;
inline constexpr VarId kNoVar = -1;

namespace detail {

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  if (!acc) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T s = acc ? crow[j] : T(0);
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  if (!acc) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<std::size_t>(p) * m;
    const T* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// Reverse-mode tape scoped to one forward/backward pass. Values are immutable
// once produced; ops are pure functions of their inputs.
template <class T>
class Tape {
 public:
  VarId leaf(TensorT<T> v, bool requires_grad = false) {
    vals_.push_back(std::move(v));
    needs_.push_back(requires_grad);
    backs_.emplace_back();
    return static_cast<VarId>(vals_.size() - 1);
  }
  VarId constant(TensorT<T> v) { return leaf(std::move(v), false); }

  const TensorT<T>& val(VarId id) const { return vals_[static_cast<std::size_t>(id)]; }
  const TensorT<T>& grad(VarId id) const { return grads_[static_cast<std::size_t>(id)]; }
  bool requires_grad(VarId id) const { return needs_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return vals_.size(); }

  // ---- elementwise ----

  VarId add(VarId a, VarId b) {
    require_same_shape(a, b, "add");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return emit(std::move(out), {a, b}, [this, a, b](const TensorT<T>& g) {
      acc_grad(a, g);
      acc_grad(b, g);
    });
  }

  VarId sub(VarId a, VarId b) {
    require_same_shape(a, b, "sub");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return emit(std::move(out), {a, b}, [this, a, b](const TensorT<T>& g) {
      acc_grad(a, g);
      if (needs(b)) {
        TensorT<T> gb = g;
        for (auto& x : gb.data) x = -x;
        acc_grad(b, gb);
      }
    });
  }

  VarId mul(VarId a, VarId b) {
    require_same_shape(a, b, "mul");
    TensorT<T> out = val(a);
    const auto& bv = val(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return emit(std::move(out), {a, b}, [this, a, b](const TensorT<T>& g) {
      if (needs(a)) {
        TensorT<T> ga = g;
        const auto& bv2 = val(b);
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= bv2[i];
        acc_grad(a, ga);
      }
      if (needs(b)) {
        TensorT<T> gb = g;
        const auto& av2 = val(a);
        for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] *= av2[i];
        acc_grad(b, gb);
      }
    });
  }

  VarId scale(VarId a, T c) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x *= c;
    return emit(std::move(out), {a}, [this, a, c](const TensorT<T>& g) {
      TensorT<T> ga = g;
      for (auto& x : ga.data) x *= c;
      acc_grad(a, ga);
    });
  }

  VarId add_scalar(VarId a, T c) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x += c;
    return emit(std::move(out), {a}, [this, a](const TensorT<T>& g) { acc_grad(a, g); });
  }

  VarId exp_op(VarId a) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x = std::exp(x);
    VarId id = emit_value(std::move(out), {a});
    set_back(id, [this, a, id](const TensorT<T>& g) {
      TensorT<T> ga = g;
      const auto& y = val(id);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= y[i];
      acc_grad(a, ga);
    });
    return id;
  }

  VarId tanh_op(VarId a) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x = std::tanh(x);
    VarId id = emit_value(std::move(out), {a});
    set_back(id, [this, a, id](const TensorT<T>& g) {
      TensorT<T> ga = g;
      const auto& y = val(id);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= T(1) - y[i] * y[i];
      acc_grad(a, ga);
    });
    return id;
  }

  // pass-through gradient strictly inside [lo, hi], zero outside
  VarId clamp(VarId a, T lo, T hi) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x = std::min(hi, std::max(lo, x));
    VarId id = emit_value(std::move(out), {a});
    set_back(id, [this, a, lo, hi](const TensorT<T>& g) {
      TensorT<T> ga = g;
      const auto& x = val(a);
      for (std::int64_t i = 0; i < ga.numel(); ++i)
        if (x[i] <= lo || x[i] >= hi) ga[i] = T(0);
      acc_grad(a, ga);
    });
    return id;
  }

  VarId silu(VarId a) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x = x / (T(1) + std::exp(-x));
    return emit(std::move(out), {a}, [this, a](const TensorT<T>& g) {
      TensorT<T> ga = g;
      const auto& x = val(a);
      for (std::int64_t i = 0; i < ga.numel(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        ga[i] *= s * (T(1) + x[i] * (T(1) - s));
      }
      acc_grad(a, ga);
    });
  }

  // tanh-approximation GELU
  VarId gelu(VarId a) {
    TensorT<T> out = val(a);
    for (auto& x : out.data) x = gelu_fwd(x);
    return emit(std::move(out), {a}, [this, a](const TensorT<T>& g) {
      TensorT<T> ga = g;
      const auto& x = val(a);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] *= gelu_bwd(x[i]);
      acc_grad(a, ga);
    });
  }

  // ---- linear algebra ----

  // x[..., K] * w[K, N] -> [..., N]
  VarId matmul(VarId x, VarId w) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (xv.rank() < 2 || wv.rank() != 2 || xv.shape.back() != wv.shape[0])
      throw std::logic_error("matmul: shape mismatch " + shape_str(xv.shape) + " x " +
                             shape_str(wv.shape));
    const int k = wv.shape[0], n = wv.shape[1];
    const int m = static_cast<int>(xv.numel() / k);
    std::vector<int> oshape = xv.shape;
    oshape.back() = n;
    TensorT<T> out(oshape);
    detail::gemm_nn(xv.data.data(), wv.data.data(), out.data.data(), m, k, n, false);
    return emit(std::move(out), {x, w}, [this, x, w, m, k, n](const TensorT<T>& g) {
      if (needs(x)) {
        TensorT<T> gx(val(x).shape);
        detail::gemm_nt(g.data.data(), val(w).data.data(), gx.data.data(), m, n, k, false);
        acc_grad(x, gx);
      }
      if (needs(w)) {
        TensorT<T> gw(val(w).shape);
        detail::gemm_tn(val(x).data.data(), g.data.data(), gw.data.data(), k, m, n, false);
        acc_grad(w, gw);
      }
    });
  }

  VarId linear(VarId x, VarId w, VarId b) { return add_rowvec(matmul(x, w), b); }

  // x[..., D] + v[D]
  VarId add_rowvec(VarId x, VarId v) {
    const auto& xv = val(x);
    const auto& vv = val(v);
    const int d = xv.shape.back();
    if (vv.numel() != d) throw std::logic_error("add_rowvec: dim mismatch");
    TensorT<T> out = xv;
    const std::int64_t rows = out.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j) out[r * d + j] += vv[j];
    return emit(std::move(out), {x, v}, [this, x, v, d](const TensorT<T>& g) {
      acc_grad(x, g);
      if (needs(v)) {
        TensorT<T> gv(val(v).shape);
        const std::int64_t rows = g.numel() / d;
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gv[j] += g[r * d + j];
        acc_grad(v, gv);
      }
    });
  }

  // x[..., D] * v[D]
  VarId mul_rowvec(VarId x, VarId v) {
    const auto& xv = val(x);
    const auto& vv = val(v);
    const int d = xv.shape.back();
    if (vv.numel() != d) throw std::logic_error("mul_rowvec: dim mismatch");
    TensorT<T> out = xv;
    const std::int64_t rows = out.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j) out[r * d + j] *= vv[j];
    return emit(std::move(out), {x, v}, [this, x, v, d](const TensorT<T>& g) {
      const std::int64_t rows = g.numel() / d;
      if (needs(x)) {
        TensorT<T> gx = g;
        const auto& vv2 = val(v);
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gx[r * d + j] *= vv2[j];
        acc_grad(x, gx);
      }
      if (needs(v)) {
        TensorT<T> gv(val(v).shape);
        const auto& xv2 = val(x);
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gv[j] += g[r * d + j] * xv2[r * d + j];
        acc_grad(v, gv);
      }
    });
  }

  // x[B, N, D] + y[B, D]  (broadcast over axis 1)
  VarId add_bcast1(VarId x, VarId y) {
    const auto& xv = val(x);
    const auto& yv = val(y);
    if (xv.rank() != 3 || yv.rank() != 2 || xv.shape[0] != yv.shape[0] ||
        xv.shape[2] != yv.shape[1])
      throw std::logic_error("add_bcast1: shape mismatch");
    const int bsz = xv.shape[0], n = xv.shape[1], d = xv.shape[2];
    TensorT<T> out = xv;
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(b, i, j) += yv.at(b, j);
    return emit(std::move(out), {x, y}, [this, x, y, bsz, n, d](const TensorT<T>& g) {
      acc_grad(x, g);
      if (needs(y)) {
        TensorT<T> gy(val(y).shape);
        for (int b = 0; b < bsz; ++b)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gy.at(b, j) += g.at(b, i, j);
        acc_grad(y, gy);
      }
    });
  }

  // [B,N,D] * [B,D], the per-batch row broadcast across N
  VarId mul_bcast1(VarId x, VarId y) {
    const auto& xv = val(x);
    const auto& yv = val(y);
    if (xv.rank() != 3 || yv.rank() != 2 || xv.shape[0] != yv.shape[0] ||
        xv.shape[2] != yv.shape[1])
      throw std::logic_error("mul_bcast1: shape mismatch");
    const int bsz = xv.shape[0], n = xv.shape[1], d = xv.shape[2];
    TensorT<T> out = xv;
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(b, i, j) *= yv.at(b, j);
    return emit(std::move(out), {x, y}, [this, x, y, bsz, n, d](const TensorT<T>& g) {
      if (needs(x)) {
        TensorT<T> gx = g;
        const auto& yv2 = val(y);
        for (int b = 0; b < bsz; ++b)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gx.at(b, i, j) *= yv2.at(b, j);
        acc_grad(x, gx);
      }
      if (needs(y)) {
        TensorT<T> gy(val(y).shape);
        const auto& xv2 = val(x);
        for (int b = 0; b < bsz; ++b)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gy.at(b, j) += g.at(b, i, j) * xv2.at(b, i, j);
        acc_grad(y, gy);
      }
    });
  }

  VarId layernorm(VarId x, VarId gain, VarId bias, T eps = T(1e-5)) {
    const auto& xv = val(x);
    const int d = xv.shape.back();
    if (val(gain).numel() != d || val(bias).numel() != d)
      throw std::logic_error("layernorm: dim mismatch");
    const std::int64_t rows = xv.numel() / d;
    TensorT<T> out(xv.shape);
    TensorT<T> xhat(xv.shape);
    TensorT<T> inv_sigma({static_cast<int>(std::max<std::int64_t>(rows, 1))});
    const auto& gv = val(gain);
    const auto& bv = val(bias);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = xv.data.data() + r * d;
      T mu = 0;
      for (int j = 0; j < d; ++j) mu += xr[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<T>(d);
      const T is = T(1) / std::sqrt(var + eps);
      inv_sigma[r] = is;
      for (int j = 0; j < d; ++j) {
        const T xh = (xr[j] - mu) * is;
        xhat[r * d + j] = xh;
        out[r * d + j] = xh * gv[j] + bv[j];
      }
    }
    auto xh = std::make_shared<TensorT<T>>(std::move(xhat));
    auto is = std::make_shared<TensorT<T>>(std::move(inv_sigma));
    return emit(std::move(out), {x, gain, bias},
                [this, x, gain, bias, d, rows, xh, is](const TensorT<T>& g) {
                  const auto& gv2 = val(gain);
                  if (needs(x)) {
                    TensorT<T> gx(val(x).shape);
                    for (std::int64_t r = 0; r < rows; ++r) {
                      const T* gr = g.data.data() + r * d;
                      const T* xhr = xh->data.data() + r * d;
                      T mw = 0, mwx = 0;
                      for (int j = 0; j < d; ++j) {
                        const T w = gr[j] * gv2[j];
                        mw += w;
                        mwx += w * xhr[j];
                      }
                      mw /= static_cast<T>(d);
                      mwx /= static_cast<T>(d);
                      const T s = (*is)[r];
                      for (int j = 0; j < d; ++j) {
                        const T w = gr[j] * gv2[j];
                        gx[r * d + j] = (w - mw - xhr[j] * mwx) * s;
                      }
                    }
                    acc_grad(x, gx);
                  }
                  if (needs(gain)) {
                    TensorT<T> gg(val(gain).shape);
                    for (std::int64_t r = 0; r < rows; ++r)
                      for (int j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xh)[r * d + j];
                    acc_grad(gain, gg);
                  }
                  if (needs(bias)) {
                    TensorT<T> gb(val(bias).shape);
                    for (std::int64_t r = 0; r < rows; ++r)
                      for (int j = 0; j < d; ++j) gb[j] += g[r * d + j];
                    acc_grad(bias, gb);
                  }
                });
  }

  VarId softmax_last(VarId x) {
    const auto& xv = val(x);
    const int d = xv.shape.back();
    const std::int64_t rows = xv.numel() / d;
    TensorT<T> out(xv.shape);
    for (std::int64_t r = 0; r < rows; ++r)
      softmax_row(xv.data.data() + r * d, out.data.data() + r * d, d);
    VarId id = emit_value(std::move(out), {x});
    set_back(id, [this, x, id, d, rows](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      const auto& p = val(id);
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* pr = p.data.data() + r * d;
        const T* gr = g.data.data() + r * d;
        T dot = 0;
        for (int j = 0; j < d; ++j) dot += pr[j] * gr[j];
        for (int j = 0; j < d; ++j) gx[r * d + j] = pr[j] * (gr[j] - dot);
      }
      acc_grad(x, gx);
    });
    return id;
  }

  // Fused scaled-dot-product attention on [B,H,N,d].
  // logits = QK^T/sqrt(d) (+ bias) (+ constant mask add); out = softmax(logits) V.
  VarId attention(VarId q, VarId k, VarId v, VarId bias = kNoVar,
                  const TensorT<T>* mask_add = nullptr) {
    const auto& qv = val(q);
    const auto& kv = val(k);
    const auto& vv = val(v);
    if (qv.rank() != 4 || !qv.same_shape(kv) || !qv.same_shape(vv))
      throw std::logic_error("attention: expects matching [B,H,N,d]");
    const int bh = qv.shape[0] * qv.shape[1];
    const int n = qv.shape[2], d = qv.shape[3];
    if (bias != kNoVar) {
      const auto& bvv = val(bias);
      if (bvv.rank() != 4 || bvv.shape[0] != qv.shape[0] || bvv.shape[1] != qv.shape[1] ||
          bvv.shape[2] != n || bvv.shape[3] != n)
        throw std::logic_error("attention: bias must be [B,H,N,N]");
    }
    if (mask_add && mask_add->numel() != static_cast<std::int64_t>(bh) * n * n)
      throw std::logic_error("attention: mask shape mismatch");
    const T scale_f = T(1) / std::sqrt(static_cast<T>(d));

    auto probs = std::make_shared<TensorT<T>>(
        TensorT<T>({qv.shape[0], qv.shape[1], n, n}));
    TensorT<T> out(qv.shape);
    std::vector<T> logits(static_cast<std::size_t>(n) * n);
    for (int g = 0; g < bh; ++g) {
      const T* qp = qv.data.data() + static_cast<std::size_t>(g) * n * d;
      const T* kp = kv.data.data() + static_cast<std::size_t>(g) * n * d;
      const T* vp = vv.data.data() + static_cast<std::size_t>(g) * n * d;
      detail::gemm_nt(qp, kp, logits.data(), n, d, n, false);
      for (auto& x : logits) x *= scale_f;
      if (bias != kNoVar) {
        const T* bp = val(bias).data.data() + static_cast<std::size_t>(g) * n * n;
        for (int i = 0; i < n * n; ++i) logits[static_cast<std::size_t>(i)] += bp[i];
      }
      if (mask_add) {
        const T* mp = mask_add->data.data() + static_cast<std::size_t>(g) * n * n;
        for (int i = 0; i < n * n; ++i) logits[static_cast<std::size_t>(i)] += mp[i];
      }
      T* pp = probs->data.data() + static_cast<std::size_t>(g) * n * n;
      for (int i = 0; i < n; ++i) softmax_row(logits.data() + static_cast<std::size_t>(i) * n,
                                              pp + static_cast<std::size_t>(i) * n, n);
      detail::gemm_nn(pp, vp, out.data.data() + static_cast<std::size_t>(g) * n * d, n, n, d,
                      false);
    }
    check_finite(out, "attention");
    std::vector<VarId> parents = {q, k, v};
    if (bias != kNoVar) parents.push_back(bias);
    return emit(std::move(out), parents,
                [this, q, k, v, bias, probs, bh, n, d, scale_f](const TensorT<T>& g) {
                  TensorT<T> gq(val(q).shape), gk(val(k).shape), gv2(val(v).shape);
                  TensorT<T> gbias;
                  const bool need_bias = bias != kNoVar && needs(bias);
                  if (need_bias) gbias = TensorT<T>(val(bias).shape);
                  std::vector<T> dp(static_cast<std::size_t>(n) * n);
                  std::vector<T> ds(static_cast<std::size_t>(n) * n);
                  for (int grp = 0; grp < bh; ++grp) {
                    const std::size_t ofs_nd = static_cast<std::size_t>(grp) * n * d;
                    const std::size_t ofs_nn = static_cast<std::size_t>(grp) * n * n;
                    const T* gp = g.data.data() + ofs_nd;
                    const T* pp = probs->data.data() + ofs_nn;
                    const T* qp = val(q).data.data() + ofs_nd;
                    const T* kp = val(k).data.data() + ofs_nd;
                    const T* vp = val(v).data.data() + ofs_nd;
                    // dV = P^T dOut
                    detail::gemm_tn(pp, gp, gv2.data.data() + ofs_nd, n, n, d, false);
                    // dP = dOut V^T
                    detail::gemm_nt(gp, vp, dp.data(), n, d, n, false);
                    // dS = P o (dP - rowsum(dP o P))
                    for (int i = 0; i < n; ++i) {
                      const T* pr = pp + static_cast<std::size_t>(i) * n;
                      const T* dpr = dp.data() + static_cast<std::size_t>(i) * n;
                      T dot = 0;
                      for (int j = 0; j < n; ++j) dot += pr[j] * dpr[j];
                      T* dsr = ds.data() + static_cast<std::size_t>(i) * n;
                      for (int j = 0; j < n; ++j) dsr[j] = pr[j] * (dpr[j] - dot);
                    }
                    // dQ = dS K * scale ; dK = dS^T Q * scale
                    detail::gemm_nn(ds.data(), kp, gq.data.data() + ofs_nd, n, n, d, false);
                    detail::gemm_tn(ds.data(), qp, gk.data.data() + ofs_nd, n, n, d, false);
                    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) {
                      gq.data[ofs_nd + i] *= scale_f;
                      gk.data[ofs_nd + i] *= scale_f;
                    }
                    if (need_bias)
                      for (std::size_t i = 0; i < static_cast<std::size_t>(n) * n; ++i)
                        gbias.data[ofs_nn + i] = ds[i];
                  }
                  if (needs(q)) acc_grad(q, gq);
                  if (needs(k)) acc_grad(k, gk);
                  if (needs(v)) acc_grad(v, gv2);
                  if (need_bias) acc_grad(bias, gbias);
                });
  }

  // [B,N,H*dh] -> [B,H,N,dh]
  VarId split_heads(VarId x, int heads) {
    const auto& xv = val(x);
    if (xv.rank() != 3 || xv.shape[2] % heads != 0)
      throw std::logic_error("split_heads: bad shape");
    const int bsz = xv.shape[0], n = xv.shape[1], dh = xv.shape[2] / heads;
    TensorT<T> out({bsz, heads, n, dh});
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int h = 0; h < heads; ++h)
          for (int j = 0; j < dh; ++j) out.at(b, h, i, j) = xv.at(b, i, h * dh + j);
    return emit(std::move(out), {x}, [this, x, bsz, n, heads, dh](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < n; ++i)
          for (int h = 0; h < heads; ++h)
            for (int j = 0; j < dh; ++j) gx.at(b, i, h * dh + j) = g.at(b, h, i, j);
      acc_grad(x, gx);
    });
  }

  // [B,H,N,dh] -> [B,N,H*dh]
  VarId merge_heads(VarId x) {
    const auto& xv = val(x);
    if (xv.rank() != 4) throw std::logic_error("merge_heads: bad shape");
    const int bsz = xv.shape[0], heads = xv.shape[1], n = xv.shape[2], dh = xv.shape[3];
    TensorT<T> out({bsz, n, heads * dh});
    for (int b = 0; b < bsz; ++b)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < dh; ++j) out.at(b, i, h * dh + j) = xv.at(b, h, i, j);
    return emit(std::move(out), {x}, [this, x, bsz, n, heads, dh](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int b = 0; b < bsz; ++b)
        for (int h = 0; h < heads; ++h)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < dh; ++j) gx.at(b, h, i, j) = g.at(b, i, h * dh + j);
      acc_grad(x, gx);
    });
  }

  VarId reshape(VarId x, std::vector<int> shape) {
    const auto& xv = val(x);
    if (TensorT<T>::numel_of(shape) != xv.numel()) throw std::logic_error("reshape: numel");
    TensorT<T> out(shape, xv.data);
    return emit(std::move(out), {x}, [this, x](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape, g.data);
      acc_grad(x, gx);
    });
  }

  // ---- convolution (channels-last) ----

  // x[B,H,W,Cin], w[kh,kw,Cin,Cout], b[Cout]
  VarId conv2d(VarId x, VarId w, VarId b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (xv.rank() != 4 || wv.rank() != 4 || xv.shape[3] != wv.shape[2])
      throw std::logic_error("conv2d: shape mismatch");
    const int bsz = xv.shape[0], ih = xv.shape[1], iw = xv.shape[2], ci = xv.shape[3];
    const int kh = wv.shape[0], kw = wv.shape[1], co = wv.shape[3];
    const int oh = (ih + 2 * pad - kh) / stride + 1;
    const int ow = (iw + 2 * pad - kw) / stride + 1;
    TensorT<T> out({bsz, oh, ow, co});
    const auto& bv = val(b);
    for (int bb = 0; bb < bsz; ++bb)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T* op = &out.at(bb, oy, ox, 0);
          for (int c = 0; c < co; ++c) op[c] = bv[c];
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= ih) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= iw) continue;
              const T* xp = &xv.at(bb, iy, ix, 0);
              const T* wp = &wv.at(ky, kx, 0, 0);
              for (int c = 0; c < ci; ++c) {
                const T a = xp[c];
                const T* wrow = wp + static_cast<std::size_t>(c) * co;
                for (int d = 0; d < co; ++d) op[d] += a * wrow[d];
              }
            }
          }
        }
    return emit(std::move(out), {x, w, b},
                [this, x, w, b, stride, pad, bsz, ih, iw, ci, kh, kw, co, oh,
                 ow](const TensorT<T>& g) {
                  const auto& xv2 = val(x);
                  const auto& wv2 = val(w);
                  TensorT<T> gx, gw, gb;
                  const bool nx = needs(x), nw = needs(w), nb = needs(b);
                  if (nx) gx = TensorT<T>(xv2.shape);
                  if (nw) gw = TensorT<T>(wv2.shape);
                  if (nb) gb = TensorT<T>(val(b).shape);
                  for (int bb = 0; bb < bsz; ++bb)
                    for (int oy = 0; oy < oh; ++oy)
                      for (int ox = 0; ox < ow; ++ox) {
                        const T* gp = &g.at(bb, oy, ox, 0);
                        if (nb)
                          for (int d = 0; d < co; ++d) gb[d] += gp[d];
                        for (int ky = 0; ky < kh; ++ky) {
                          const int iy = oy * stride - pad + ky;
                          if (iy < 0 || iy >= ih) continue;
                          for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= iw) continue;
                            const T* xp = &xv2.at(bb, iy, ix, 0);
                            const T* wp = &wv2.at(ky, kx, 0, 0);
                            for (int c = 0; c < ci; ++c) {
                              const T* wrow = wp + static_cast<std::size_t>(c) * co;
                              if (nx) {
                                T s = 0;
                                for (int d = 0; d < co; ++d) s += wrow[d] * gp[d];
                                gx.at(bb, iy, ix, c) += s;
                              }
                              if (nw) {
                                const T a = xp[c];
                                T* gwrow = &gw.at(ky, kx, c, 0);
                                for (int d = 0; d < co; ++d) gwrow[d] += a * gp[d];
                              }
                            }
                          }
                        }
                      }
                  if (nx) acc_grad(x, gx);
                  if (nw) acc_grad(w, gw);
                  if (nb) acc_grad(b, gb);
                });
  }

  // x[B,L,Cin], w[k,Cin,Cout], b[Cout] -- via the 2d path with H=1
  VarId conv1d(VarId x, VarId w, VarId b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (xv.rank() != 3 || wv.rank() != 3) throw std::logic_error("conv1d: shape mismatch");
    VarId x4 = reshape(x, {xv.shape[0], 1, xv.shape[1], xv.shape[2]});
    VarId w4 = reshape(w, {1, wv.shape[0], wv.shape[1], wv.shape[2]});
    VarId y = conv2d(x4, w4, b, stride, pad ? pad : 0);
    // conv2d with pad would also pad H; H=1 with kh=1 is unaffected only if pad=0.
    // For pad>0 use the dedicated path below.
    if (pad == 0) {
      const auto& yv = val(y);
      return reshape(y, {yv.shape[0], yv.shape[2], yv.shape[3]});
    }
    throw std::logic_error("conv1d: use conv1d_p for padded convolutions");
  }

  VarId conv1d_p(VarId x, VarId w, VarId b, int stride, int pad) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    if (xv.rank() != 3 || wv.rank() != 3 || xv.shape[2] != wv.shape[1])
      throw std::logic_error("conv1d: shape mismatch");
    const int bsz = xv.shape[0], il = xv.shape[1], ci = xv.shape[2];
    const int kk = wv.shape[0], co = wv.shape[2];
    const int ol = (il + 2 * pad - kk) / stride + 1;
    TensorT<T> out({bsz, ol, co});
    const auto& bv = val(b);
    for (int bb = 0; bb < bsz; ++bb)
      for (int oy = 0; oy < ol; ++oy) {
        T* op = &out.at(bb, oy, 0);
        for (int c = 0; c < co; ++c) op[c] = bv[c];
        for (int ky = 0; ky < kk; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= il) continue;
          const T* xp = &xv.at(bb, iy, 0);
          const T* wp = &wv.at(ky, 0, 0);
          for (int c = 0; c < ci; ++c) {
            const T a = xp[c];
            const T* wrow = wp + static_cast<std::size_t>(c) * co;
            for (int d = 0; d < co; ++d) op[d] += a * wrow[d];
          }
        }
      }
    return emit(std::move(out), {x, w, b},
                [this, x, w, b, stride, pad, bsz, il, ci, kk, co, ol](const TensorT<T>& g) {
                  const auto& xv2 = val(x);
                  const auto& wv2 = val(w);
                  TensorT<T> gx, gw, gb;
                  const bool nx = needs(x), nw = needs(w), nb = needs(b);
                  if (nx) gx = TensorT<T>(xv2.shape);
                  if (nw) gw = TensorT<T>(wv2.shape);
                  if (nb) gb = TensorT<T>(val(b).shape);
                  for (int bb = 0; bb < bsz; ++bb)
                    for (int oy = 0; oy < ol; ++oy) {
                      const T* gp = &g.at(bb, oy, 0);
                      if (nb)
                        for (int d = 0; d < co; ++d) gb[d] += gp[d];
                      for (int ky = 0; ky < kk; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= il) continue;
                        const T* xp = &xv2.at(bb, iy, 0);
                        const T* wp = &wv2.at(ky, 0, 0);
                        for (int c = 0; c < ci; ++c) {
                          const T* wrow = wp + static_cast<std::size_t>(c) * co;
                          if (nx) {
                            T s = 0;
                            for (int d = 0; d < co; ++d) s += wrow[d] * gp[d];
                            gx.at(bb, iy, c) += s;
                          }
                          if (nw) {
                            const T a = xp[c];
                            T* gwrow = &gw.at(ky, c, 0);
                            for (int d = 0; d < co; ++d) gwrow[d] += a * gp[d];
                          }
                        }
                      }
                    }
                  if (nx) acc_grad(x, gx);
                  if (nw) acc_grad(w, gw);
                  if (nb) acc_grad(b, gb);
                });
  }

  VarId upsample2x_2d(VarId x) {
    const auto& xv = val(x);
    if (xv.rank() != 4) throw std::logic_error("upsample2x_2d: rank");
    const int bsz = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3];
    TensorT<T> out({bsz, 2 * h, 2 * w, c});
    for (int b = 0; b < bsz; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          for (int ch = 0; ch < c; ++ch) {
            const T v = xv.at(b, y, xx, ch);
            out.at(b, 2 * y, 2 * xx, ch) = v;
            out.at(b, 2 * y, 2 * xx + 1, ch) = v;
            out.at(b, 2 * y + 1, 2 * xx, ch) = v;
            out.at(b, 2 * y + 1, 2 * xx + 1, ch) = v;
          }
    return emit(std::move(out), {x}, [this, x, bsz, h, w, c](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int b = 0; b < bsz; ++b)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            for (int ch = 0; ch < c; ++ch)
              gx.at(b, y, xx, ch) = g.at(b, 2 * y, 2 * xx, ch) + g.at(b, 2 * y, 2 * xx + 1, ch) +
                                    g.at(b, 2 * y + 1, 2 * xx, ch) +
                                    g.at(b, 2 * y + 1, 2 * xx + 1, ch);
      acc_grad(x, gx);
    });
  }

  VarId upsample2x_1d(VarId x) {
    const auto& xv = val(x);
    if (xv.rank() != 3) throw std::logic_error("upsample2x_1d: rank");
    const int bsz = xv.shape[0], l = xv.shape[1], c = xv.shape[2];
    TensorT<T> out({bsz, 2 * l, c});
    for (int b = 0; b < bsz; ++b)
      for (int y = 0; y < l; ++y)
        for (int ch = 0; ch < c; ++ch) {
          const T v = xv.at(b, y, ch);
          out.at(b, 2 * y, ch) = v;
          out.at(b, 2 * y + 1, ch) = v;
        }
    return emit(std::move(out), {x}, [this, x, bsz, l, c](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int b = 0; b < bsz; ++b)
        for (int y = 0; y < l; ++y)
          for (int ch = 0; ch < c; ++ch)
            gx.at(b, y, ch) = g.at(b, 2 * y, ch) + g.at(b, 2 * y + 1, ch);
      acc_grad(x, gx);
    });
  }

  // ---- gather / pair / structure ops ----

  // x[R,D] -> rows idx -> [|idx|,D]
  VarId gather_rows(VarId x, std::vector<int> idx) {
    const auto& xv = val(x);
    if (xv.rank() != 2) throw std::logic_error("gather_rows: rank");
    const int d = xv.shape[1];
    const int m = static_cast<int>(idx.size());
    for (int r : idx)
      if (r < 0 || r >= xv.shape[0]) throw std::out_of_range("gather_rows: index out of range");
    TensorT<T> out({m, d});
    for (int i = 0; i < m; ++i)
      std::copy_n(xv.data.data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * d,
                  d, out.data.data() + static_cast<std::size_t>(i) * d);
    auto ix = std::make_shared<std::vector<int>>(std::move(idx));
    return emit(std::move(out), {x}, [this, x, ix, d, m](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int i = 0; i < m; ++i) {
        T* dst = gx.data.data() + static_cast<std::size_t>((*ix)[static_cast<std::size_t>(i)]) * d;
        const T* src = g.data.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
      acc_grad(x, gx);
    });
  }

  VarId concat_last(const std::vector<VarId>& xs) {
    if (xs.empty()) throw std::logic_error("concat_last: empty");
    std::vector<int> lead = val(xs[0]).shape;
    lead.pop_back();
    int total = 0;
    std::vector<int> dims;
    for (VarId v : xs) {
      std::vector<int> l = val(v).shape;
      const int d = l.back();
      l.pop_back();
      if (l != lead) throw std::logic_error("concat_last: leading dims mismatch");
      dims.push_back(d);
      total += d;
    }
    std::int64_t rows = 1;
    for (int d : lead) rows *= d;
    std::vector<int> oshape = lead;
    oshape.push_back(total);
    TensorT<T> out(oshape);
    for (std::int64_t r = 0; r < rows; ++r) {
      T* dst = out.data.data() + r * total;
      for (std::size_t s = 0; s < xs.size(); ++s) {
        const int d = dims[s];
        std::copy_n(val(xs[s]).data.data() + r * d, d, dst);
        dst += d;
      }
    }
    auto xs2 = std::make_shared<std::vector<VarId>>(xs);
    auto dims2 = std::make_shared<std::vector<int>>(std::move(dims));
    return emit(std::move(out), xs, [this, xs2, dims2, rows, total](const TensorT<T>& g) {
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* src = g.data.data() + r * total;
        for (std::size_t s = 0; s < xs2->size(); ++s) {
          const int d = (*dims2)[s];
          if (needs((*xs2)[s])) {
            TensorT<T>& gx = grad_slot((*xs2)[s]);
            T* dst = gx.data.data() + r * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
          }
          src += d;
        }
      }
    });
  }

  // x[B,n,d] -> [B,n,n,d]; out(b,i,j,:) = x(b,i,:)
  VarId pair_rows(VarId x) { return pair_expand(x, /*rows=*/true); }
  // x[B,n,d] -> [B,n,n,d]; out(b,i,j,:) = x(b,j,:)
  VarId pair_cols(VarId x) { return pair_expand(x, /*rows=*/false); }

  // e[B,n,n,H] -> [B,H,n,n]
  VarId pairs_to_heads(VarId e) {
    const auto& ev = val(e);
    if (ev.rank() != 4) throw std::logic_error("pairs_to_heads: rank");
    const int bsz = ev.shape[0], n = ev.shape[1], h = ev.shape[3];
    if (ev.shape[2] != n) throw std::logic_error("pairs_to_heads: square");
    TensorT<T> out({bsz, h, n, n});
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          for (int c = 0; c < h; ++c) out.at(b, c, i, j) = ev.at(b, i, j, c);
    return emit(std::move(out), {e}, [this, e, bsz, n, h](const TensorT<T>& g) {
      if (!needs(e)) return;
      TensorT<T> ge(val(e).shape);
      for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            for (int c = 0; c < h; ++c) ge.at(b, i, j, c) = g.at(b, c, i, j);
      acc_grad(e, ge);
    });
  }

  // x[B,n,n] -> x + x^T (pairwise transpose over the two node axes)
  VarId add_transpose_nn(VarId x) {
    const auto& xv = val(x);
    if (xv.rank() != 3 || xv.shape[1] != xv.shape[2])
      throw std::logic_error("add_transpose_nn: expects [B,n,n]");
    const int bsz = xv.shape[0], n = xv.shape[1];
    TensorT<T> out(xv.shape);
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.at(b, i, j) = xv.at(b, i, j) + xv.at(b, j, i);
    return emit(std::move(out), {x}, [this, x, bsz, n](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) gx.at(b, i, j) = g.at(b, i, j) + g.at(b, j, i);
      acc_grad(x, gx);
    });
  }

  VarId mul_const(VarId x, TensorT<T> m) {
    require_shape(x, m.shape, "mul_const");
    TensorT<T> out = val(x);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= m[i];
    auto mm = std::make_shared<TensorT<T>>(std::move(m));
    return emit(std::move(out), {x}, [this, x, mm](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx = g;
      for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] *= (*mm)[i];
      acc_grad(x, gx);
    });
  }

  VarId add_const(VarId x, TensorT<T> m) {
    require_shape(x, m.shape, "add_const");
    TensorT<T> out = val(x);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += m[i];
    return emit(std::move(out), {x}, [this, x](const TensorT<T>& g) { acc_grad(x, g); });
  }

  // ---- reductions / losses ----

  VarId sum_all(VarId x) {
    T s = 0;
    for (const T& v : val(x).data) s += v;
    return emit(TensorT<T>::scalar(s), {x}, [this, x](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx = TensorT<T>::full(val(x).shape, g[0]);
      acc_grad(x, gx);
    });
  }

  VarId mean_all(VarId x) {
    const T inv = T(1) / static_cast<T>(val(x).numel());
    T s = 0;
    for (const T& v : val(x).data) s += v;
    return emit(TensorT<T>::scalar(s * inv), {x}, [this, x, inv](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx = TensorT<T>::full(val(x).shape, g[0] * inv);
      acc_grad(x, gx);
    });
  }

  // Mean of squared differences over unmasked entries; gradient
  // 2(pred-target)/count on unmasked entries, 0 elsewhere.
  VarId mse(VarId pred, VarId target, const TensorT<T>* mask = nullptr) {
    require_same_shape(pred, target, "mse");
    const auto& pv = val(pred);
    const auto& tv = val(target);
    if (mask && mask->numel() != pv.numel()) throw std::logic_error("mse: mask shape");
    std::int64_t count = 0;
    T s = 0;
    for (std::int64_t i = 0; i < pv.numel(); ++i) {
      if (mask && (*mask)[i] == T(0)) continue;
      const T d = pv[i] - tv[i];
      s += d * d;
      ++count;
    }
    if (count == 0) throw std::runtime_error("mse: all entries masked");
    auto mk = mask ? std::make_shared<TensorT<T>>(*mask) : nullptr;
    const T inv = T(1) / static_cast<T>(count);
    return emit(TensorT<T>::scalar(s * inv), {pred, target},
                [this, pred, target, mk, inv](const TensorT<T>& g) {
                  const auto& pv2 = val(pred);
                  const auto& tv2 = val(target);
                  const T c = T(2) * inv * g[0];
                  if (needs(pred)) {
                    TensorT<T> gp(pv2.shape);
                    for (std::int64_t i = 0; i < pv2.numel(); ++i) {
                      if (mk && (*mk)[i] == T(0)) continue;
                      gp[i] = c * (pv2[i] - tv2[i]);
                    }
                    acc_grad(pred, gp);
                  }
                  if (needs(target)) {
                    TensorT<T> gt(tv2.shape);
                    for (std::int64_t i = 0; i < tv2.numel(); ++i) {
                      if (mk && (*mk)[i] == T(0)) continue;
                      gt[i] = -c * (pv2[i] - tv2[i]);
                    }
                    acc_grad(target, gt);
                  }
                });
  }

  // ---- backward ----

  void backward(VarId root) {
    if (val(root).numel() != 1) throw std::logic_error("backward: root must be scalar");
    grads_.assign(vals_.size(), TensorT<T>());
    grads_[static_cast<std::size_t>(root)] = TensorT<T>::scalar(T(1));
    for (std::int32_t i = root; i >= 0; --i) {
      const std::size_t si = static_cast<std::size_t>(i);
      if (!backs_[si] || grads_[si].numel() == 0) continue;
      backs_[si](grads_[si]);
    }
  }

 private:
  std::vector<TensorT<T>> vals_;
  std::vector<TensorT<T>> grads_;
  std::vector<std::function<void(const TensorT<T>&)>> backs_;
  std::vector<bool> needs_;

  bool needs(VarId id) const { return needs_[static_cast<std::size_t>(id)]; }

  TensorT<T>& grad_slot(VarId id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.numel() == 0) g = TensorT<T>(val(id).shape);
    return g;
  }

  void acc_grad(VarId id, const TensorT<T>& g) {
    if (!needs(id)) return;
    TensorT<T>& slot = grad_slot(id);
    for (std::int64_t i = 0; i < slot.numel(); ++i) slot[i] += g[i];
  }

  VarId emit(TensorT<T> out, const std::vector<VarId>& parents,
             std::function<void(const TensorT<T>&)> back) {
    bool any = false;
    for (VarId p : parents) any = any || needs_[static_cast<std::size_t>(p)];
    vals_.push_back(std::move(out));
    needs_.push_back(any);
    backs_.push_back(any ? std::move(back) : std::function<void(const TensorT<T>&)>());
    return static_cast<VarId>(vals_.size() - 1);
  }

  VarId emit_value(TensorT<T> out, const std::vector<VarId>& parents) {
    bool any = false;
    for (VarId p : parents) any = any || needs_[static_cast<std::size_t>(p)];
    vals_.push_back(std::move(out));
    needs_.push_back(any);
    backs_.emplace_back();
    return static_cast<VarId>(vals_.size() - 1);
  }

  void set_back(VarId id, std::function<void(const TensorT<T>&)> back) {
    if (needs_[static_cast<std::size_t>(id)]) backs_[static_cast<std::size_t>(id)] = std::move(back);
  }

  VarId pair_expand(VarId x, bool rows) {
    const auto& xv = val(x);
    if (xv.rank() != 3) throw std::logic_error("pair_expand: rank");
    const int bsz = xv.shape[0], n = xv.shape[1], d = xv.shape[2];
    TensorT<T> out({bsz, n, n, d});
    for (int b = 0; b < bsz; ++b)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const int src = rows ? i : j;
          std::copy_n(&xv.at(b, src, 0), d, &out.at(b, i, j, 0));
        }
    return emit(std::move(out), {x}, [this, x, bsz, n, d, rows](const TensorT<T>& g) {
      if (!needs(x)) return;
      TensorT<T> gx(val(x).shape);
      for (int b = 0; b < bsz; ++b)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const int dst = rows ? i : j;
            T* gp = &gx.at(b, dst, 0);
            const T* sp = &g.at(b, i, j, 0);
            for (int c = 0; c < d; ++c) gp[c] += sp[c];
          }
      acc_grad(x, gx);
    });
  }

  void require_same_shape(VarId a, VarId b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      throw std::logic_error(std::string(op) + ": shape mismatch " + shape_str(val(a).shape) +
                             " vs " + shape_str(val(b).shape));
  }
  void require_shape(VarId a, const std::vector<int>& s, const char* op) const {
    if (val(a).shape != s) throw std::logic_error(std::string(op) + ": shape mismatch");
  }

  static void softmax_row(const T* in, T* out, int d) {
    T mx = in[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (int j = 0; j < d; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < d; ++j) out[j] *= inv;
  }

  static T gelu_fwd(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
  }
  static T gelu_bwd(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
  }
};

}  // namespace gbrep
