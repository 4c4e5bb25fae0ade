#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gbrep/rng.hpp"
#include "gbrep/tape.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

// Named parameter tensors with stable insertion order (checkpoints and
// optimizer state both key off that order).
template <class T>
class ParamStore {
 public:
  TensorT<T>& add(const std::string& name, TensorT<T> init) {
    if (index_.count(name)) throw std::logic_error("ParamStore: duplicate " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(init));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  TensorT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("ParamStore: missing " + name);
    return items_[it->second].second;
  }
  const TensorT<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::logic_error("ParamStore: missing " + name);
    return items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  const std::string& name_at(std::size_t i) const { return items_[i].first; }
  TensorT<T>& at(std::size_t i) { return items_[i].second; }
  const TensorT<T>& at(std::size_t i) const { return items_[i].second; }

  std::int64_t total_numel() const {
    std::int64_t n = 0;
    for (const auto& kv : items_) n += kv.second.numel();
    return n;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& kv : items_) out.add(kv.first, kv.second.template cast<U>());
    return out;
  }

  // Copy values from another store with identical names/shapes.
  template <class U>
  void load_from(const ParamStore<U>& other) {
    if (other.size() != size()) throw std::logic_error("ParamStore: size mismatch on load");
    for (std::size_t i = 0; i < size(); ++i) {
      if (other.name_at(i) != name_at(i) || other.at(i).shape != at(i).shape)
        throw std::logic_error("ParamStore: layout mismatch on load at " + name_at(i));
      for (std::int64_t j = 0; j < at(i).numel(); ++j)
        at(i)[j] = static_cast<T>(other.at(i)[j]);
    }
  }

 private:
  std::vector<std::pair<std::string, TensorT<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
TensorT<T> xavier_uniform(const std::vector<int>& shape, int fan_in, int fan_out, Rng& rng) {
  const double lim = std::sqrt(6.0 / (fan_in + fan_out));
  TensorT<T> t(shape);
  for (auto& x : t.data) x = static_cast<T>(rng.uniform(-lim, lim));
  return t;
}

// Per-forward-pass context: binds a tape to a parameter store and creates one
// gradient-tracked leaf per parameter on first use.
template <class T>
struct Ctx {
  Tape<T>& tape;
  ParamStore<T>& params;
  bool train = true;
  std::unordered_map<std::string, VarId> bound;

  VarId p(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    VarId id = tape.leaf(params.get(name), train);
    bound[name] = id;
    return id;
  }

  // Accumulated gradient for a parameter after backward (zeros if untouched).
  TensorT<T> grad_of(const std::string& name) const {
    auto it = bound.find(name);
    if (it == bound.end()) return TensorT<T>(params.get(name).shape);
    const TensorT<T>& g = tape.grad(it->second);
    if (g.numel() == 0) return TensorT<T>(params.get(name).shape);
    return g;
  }
};

template <class T>
struct Linear {
  std::string wname, bname;
  int in = 0, out = 0;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& prefix, int in_dim, int out_dim, Rng& rng)
      : wname(prefix + ".w"), bname(prefix + ".b"), in(in_dim), out(out_dim) {
    ps.add(wname, xavier_uniform<T>({in_dim, out_dim}, in_dim, out_dim, rng));
    ps.add(bname, TensorT<T>({out_dim}));
  }

  VarId operator()(Ctx<T>& c, VarId x) const { return c.tape.linear(x, c.p(wname), c.p(bname)); }
};

template <class T>
struct LayerNorm {
  std::string gname, bname;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& prefix, int dim)
      : gname(prefix + ".g"), bname(prefix + ".b") {
    ps.add(gname, TensorT<T>::full({dim}, T(1)));
    ps.add(bname, TensorT<T>({dim}));
  }

  VarId operator()(Ctx<T>& c, VarId x) const {
    return c.tape.layernorm(x, c.p(gname), c.p(bname));
  }
};

// Channels-last convolutions; stride/pad are call-site arguments so the same
// weights can serve strided and same-size applications.
template <class T>
struct Conv2d {
  std::string wname, bname;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& prefix, int kh, int kw, int cin, int cout,
         Rng& rng)
      : wname(prefix + ".w"), bname(prefix + ".b") {
    ps.add(wname, xavier_uniform<T>({kh, kw, cin, cout}, kh * kw * cin, kh * kw * cout, rng));
    ps.add(bname, TensorT<T>({cout}));
  }

  VarId operator()(Ctx<T>& c, VarId x, int stride, int pad) const {
    return c.tape.conv2d(x, c.p(wname), c.p(bname), stride, pad);
  }
};

template <class T>
struct Conv1d {
  std::string wname, bname;

  Conv1d() = default;
  Conv1d(ParamStore<T>& ps, const std::string& prefix, int k, int cin, int cout, Rng& rng)
      : wname(prefix + ".w"), bname(prefix + ".b") {
    ps.add(wname, xavier_uniform<T>({k, cin, cout}, k * cin, k * cout, rng));
    ps.add(bname, TensorT<T>({cout}));
  }

  VarId operator()(Ctx<T>& c, VarId x, int stride, int pad) const {
    return c.tape.conv1d_p(x, c.p(wname), c.p(bname), stride, pad);
  }
};

enum class Act { kNone, kSilu, kGelu, kTanh };

template <class T>
inline VarId apply_act(Ctx<T>& c, VarId x, Act a) {
  switch (a) {
    case Act::kSilu: return c.tape.silu(x);
    case Act::kGelu: return c.tape.gelu(x);
    case Act::kTanh: return c.tape.tanh_op(x);
    case Act::kNone: return x;
  }
  return x;
}

// Stack of linears with an activation between (not after the last).
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Act act = Act::kSilu;

  Mlp() = default;
  Mlp(ParamStore<T>& ps, const std::string& prefix, const std::vector<int>& dims, Rng& rng,
      Act a = Act::kSilu)
      : act(a) {
    if (dims.size() < 2) throw std::logic_error("Mlp: needs at least in/out dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      layers.emplace_back(ps, prefix + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
  }

  VarId operator()(Ctx<T>& c, VarId x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](c, x);
      if (i + 1 < layers.size()) x = apply_act(c, x, act);
    }
    return x;
  }
};

// Multi-head self-attention over [B,N,D]. Optional additive logit bias
// [B,H,N,N] (gradient-tracked) and constant mask-add tensor of the same shape
// holding 0 / -inf-like values for padded keys.
template <class T>
struct Mha {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  Mha() = default;
  Mha(ParamStore<T>& ps, const std::string& prefix, int dim, int n_heads, Rng& rng)
      : wq(ps, prefix + ".q", dim, dim, rng),
        wk(ps, prefix + ".k", dim, dim, rng),
        wv(ps, prefix + ".v", dim, dim, rng),
        wo(ps, prefix + ".o", dim, dim, rng),
        heads(n_heads) {
    if (dim % n_heads != 0) throw std::logic_error("Mha: dim not divisible by heads");
  }

  VarId operator()(Ctx<T>& c, VarId x, VarId bias = kNoVar,
                   const TensorT<T>* mask_add = nullptr) const {
    VarId q = c.tape.split_heads(wq(c, x), heads);
    VarId k = c.tape.split_heads(wk(c, x), heads);
    VarId v = c.tape.split_heads(wv(c, x), heads);
    VarId a = c.tape.attention(q, k, v, bias, mask_add);
    return wo(c, c.tape.merge_heads(a));
  }
};

// Pre-norm transformer encoder block: x += MHA(LN(x)); x += MLP(LN(x)).
template <class T>
struct EncoderLayer {
  LayerNorm<T> ln1, ln2;
  Mha<T> attn;
  Mlp<T> ff;

  EncoderLayer() = default;
  EncoderLayer(ParamStore<T>& ps, const std::string& prefix, int dim, int heads, int ff_mult,
               Rng& rng)
      : ln1(ps, prefix + ".ln1", dim),
        ln2(ps, prefix + ".ln2", dim),
        attn(ps, prefix + ".attn", dim, heads, rng),
        ff(ps, prefix + ".ff", {dim, ff_mult * dim, dim}, rng, Act::kGelu) {}

  VarId operator()(Ctx<T>& c, VarId x, const TensorT<T>* mask_add = nullptr) const {
    x = c.tape.add(x, attn(c, ln1(c, x), kNoVar, mask_add));
    x = c.tape.add(x, ff(c, ln2(c, x)));
    return x;
  }
};

// Sinusoidal timestep features followed by a 2-layer MLP. Frequencies are
// log-spaced from 1 to 1/10000 over half the feature width.
template <class T>
TensorT<T> sinusoidal_features(const std::vector<int>& steps, int dim) {
  if (dim % 2 != 0) throw std::logic_error("sinusoidal_features: dim must be even");
  const int half = dim / 2;
  TensorT<T> out({static_cast<int>(steps.size()), dim});
  for (std::size_t b = 0; b < steps.size(); ++b) {
    for (int j = 0; j < half; ++j) {
      const double freq =
          std::exp(-std::log(10000.0) * (half > 1 ? static_cast<double>(j) / (half - 1) : 0.0));
      const double ang = static_cast<double>(steps[b]) * freq;
      out.at(static_cast<int>(b), j) = static_cast<T>(std::sin(ang));
      out.at(static_cast<int>(b), half + j) = static_cast<T>(std::cos(ang));
    }
  }
  return out;
}

template <class T>
struct TimeEmbed {
  Mlp<T> mlp;
  int feat_dim = 0;

  TimeEmbed() = default;
  TimeEmbed(ParamStore<T>& ps, const std::string& prefix, int feat, int out, Rng& rng)
      : mlp(ps, prefix, {feat, out, out}, rng, Act::kSilu), feat_dim(feat) {}

  // steps: one timestep per batch row -> [B, out]
  VarId operator()(Ctx<T>& c, const std::vector<int>& steps) const {
    VarId f = c.tape.constant(sinusoidal_features<T>(steps, feat_dim));
    return mlp(c, f);
  }
};

// Lookup table [rows, dim]; forward gathers one row per index.
template <class T>
struct Embedding {
  std::string tname;
  int rows = 0, dim = 0;

  Embedding() = default;
  Embedding(ParamStore<T>& ps, const std::string& prefix, int n_rows, int d, Rng& rng)
      : tname(prefix + ".table"), rows(n_rows), dim(d) {
    TensorT<T> t({n_rows, d});
    for (auto& x : t.data) x = static_cast<T>(rng.normal() * 0.02);
    ps.add(tname, t);
  }

  VarId operator()(Ctx<T>& c, const std::vector<int>& idx) const {
    return c.tape.gather_rows(c.p(tname), idx);
  }
};

}  // namespace gbrep
