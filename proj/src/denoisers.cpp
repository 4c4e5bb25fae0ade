#include "gbrep/denoisers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gbrep/adam.hpp"

namespace gbrep {

namespace {

template <class T>
void expect3(const Tape<T>& tape, VarId x, int last, const char* who, const char* what) {
  const auto& v = tape.val(x);
  if (v.rank() != 3 || v.shape[2] != last)
    throw std::runtime_error(std::string(who) + ": " + what + " must be [B,n," +
                             std::to_string(last) + "], got " + shape_str(v.shape));
}

// map user labels (-1 = unconditional) onto embedding rows; the null row sits
// at index num_labels
std::vector<int> label_rows(const std::vector<int>& labels, int bsz, int num_labels,
                            const char* who) {
  std::vector<int> rows(size_t(bsz), num_labels);
  if (labels.empty()) return rows;
  if (int(labels.size()) != bsz)
    throw std::runtime_error(std::string(who) + ": one label per batch item");
  for (int b = 0; b < bsz; ++b) {
    const int l = labels[size_t(b)];
    if (l < -1 || l >= num_labels)
      throw std::runtime_error(std::string(who) + ": label out of range");
    rows[size_t(b)] = l < 0 ? num_labels : l;
  }
  return rows;
}

template <class T>
TensorT<T> lift(const TensorT<T>& x) {  // [...] -> [1,...]
  std::vector<int> shape = x.shape;
  shape.insert(shape.begin(), 1);
  return TensorT<T>(shape, x.data);
}

template <class T>
TensorT<T> squeeze0(const TensorT<T>& x) {
  std::vector<int> shape(x.shape.begin() + 1, x.shape.end());
  return TensorT<T>(shape, x.data);
}

void check_node_config(const NodeDenoiserConfig& cfg, const char* who) {
  if (cfg.layers < 1 || cfg.heads < 1 || cfg.max_surfaces < 1 || cfg.num_labels < 0)
    throw std::runtime_error(std::string(who) + ": bad config");
  if (cfg.embed_dim % cfg.heads != 0)
    throw std::runtime_error(std::string(who) + ": embed_dim not divisible by heads");
  if (cfg.embed_dim % 2 != 0)
    throw std::runtime_error(std::string(who) + ": embed_dim must be even");
}

void check_edge_config(const EdgeDenoiserConfig& cfg, const char* who) {
  if (cfg.layers < 1 || cfg.heads < 1 || cfg.max_edges < 1 || cfg.num_labels < 0)
    throw std::runtime_error(std::string(who) + ": bad config");
  if (cfg.embed_dim % cfg.heads != 0)
    throw std::runtime_error(std::string(who) + ": embed_dim not divisible by heads");
  if (cfg.embed_dim % 2 != 0)
    throw std::runtime_error(std::string(who) + ": embed_dim must be even");
}

}  // namespace

// ---- node B-Box stage ----

template <class T>
NodeBboxDenoiser<T>::NodeBboxDenoiser(const NodeDenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
  check_node_config(cfg_, "NodeBboxDenoiser");
  Rng rng(seed, 0xDE00);
  const int d = cfg_.embed_dim;
  embed_ = Mlp<T>(ps_, "embed", {6, d, d}, rng);
  time_ = TimeEmbed<T>(ps_, "time", d, d, rng);
  label_ = Embedding<T>(ps_, "label", cfg_.num_labels + 1, d, rng);
  for (int i = 0; i < cfg_.layers; ++i)
    layers_.emplace_back(ps_, "enc" + std::to_string(i), d, cfg_.heads, 4, rng);
  final_ln_ = LayerNorm<T>(ps_, "final_ln", d);
  head_ = Linear<T>(ps_, "head", d, 6, rng);
}

template <class T>
VarId NodeBboxDenoiser<T>::forward(Ctx<T>& c, VarId x, const std::vector<int>& t,
                                   const std::vector<int>& labels) const {
  expect3(c.tape, x, 6, "NodeBboxDenoiser", "input");
  const int bsz = c.tape.val(x).shape[0];
  if (int(t.size()) != bsz)
    throw std::runtime_error("NodeBboxDenoiser: one timestep per batch item");
  VarId h = embed_(c, x);
  VarId y = c.tape.add(time_(c, t),
                       label_(c, label_rows(labels, bsz, cfg_.num_labels, "NodeBboxDenoiser")));
  h = c.tape.add_bcast1(h, y);
  for (const auto& layer : layers_) h = layer(c, h);
  return head_(c, final_ln_(c, h));
}

template <class T>
TensorT<T> NodeBboxDenoiser<T>::eval(const TensorT<T>& x, int t, int label) const {
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(ps_);
  Ctx<T> c{tape, ps, /*train=*/false};
  const VarId out = forward(c, tape.constant(lift(x)), {t}, {label});
  TensorT<T> res = tape.val(out);
  check_finite(res, "node bbox eval");
  return squeeze0(res);
}

// ---- node latent stage ----

template <class T>
NodeLatentDenoiser<T>::NodeLatentDenoiser(const NodeDenoiserConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  check_node_config(cfg_, "NodeLatentDenoiser");
  Rng rng(seed, 0xDE01);
  const int d = cfg_.embed_dim;
  embed_ = Mlp<T>(ps_, "embed", {kLatentDim, d, d}, rng);
  bbox_embed_ = Mlp<T>(ps_, "bbox_embed", {6, d, d}, rng);
  time_ = TimeEmbed<T>(ps_, "time", d, d, rng);
  label_ = Embedding<T>(ps_, "label", cfg_.num_labels + 1, d, rng);
  for (int i = 0; i < cfg_.layers; ++i)
    layers_.emplace_back(ps_, "enc" + std::to_string(i), d, cfg_.heads, 4, rng);
  final_ln_ = LayerNorm<T>(ps_, "final_ln", d);
  head_ = Linear<T>(ps_, "head", d, kLatentDim, rng);
}

template <class T>
VarId NodeLatentDenoiser<T>::forward(Ctx<T>& c, VarId z, const std::vector<int>& t, VarId bs,
                                     const std::vector<int>& labels) const {
  expect3(c.tape, z, kLatentDim, "NodeLatentDenoiser", "input");
  expect3(c.tape, bs, 6, "NodeLatentDenoiser", "surface boxes");
  const auto& zv = c.tape.val(z);
  const auto& bv = c.tape.val(bs);
  if (bv.shape[0] != zv.shape[0] || bv.shape[1] != zv.shape[1])
    throw std::runtime_error("NodeLatentDenoiser: condition tokens misaligned with input");
  const int bsz = zv.shape[0];
  if (int(t.size()) != bsz)
    throw std::runtime_error("NodeLatentDenoiser: one timestep per batch item");
  VarId h = c.tape.add(embed_(c, z), bbox_embed_(c, bs));
  VarId y = c.tape.add(time_(c, t),
                       label_(c, label_rows(labels, bsz, cfg_.num_labels, "NodeLatentDenoiser")));
  h = c.tape.add_bcast1(h, y);
  for (const auto& layer : layers_) h = layer(c, h);
  return head_(c, final_ln_(c, h));
}

template <class T>
TensorT<T> NodeLatentDenoiser<T>::eval(const TensorT<T>& z, int t, const TensorT<T>& bs,
                                       int label) const {
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(ps_);
  Ctx<T> c{tape, ps, /*train=*/false};
  const VarId out = forward(c, tape.constant(lift(z)), {t}, tape.constant(lift(bs)), {label});
  TensorT<T> res = tape.val(out);
  check_finite(res, "node latent eval");
  return squeeze0(res);
}

// ---- adjacency stage ----

template <class T>
AdjacencyDenoiser<T>::AdjacencyDenoiser(const GraphDenoiserConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  if (cfg_.layers < 1 || cfg_.heads < 1 || cfg_.node_dim < 1 || cfg_.edge_dim < 1 ||
      cfg_.max_surfaces < 1)
    throw std::runtime_error("AdjacencyDenoiser: bad config");
  if (cfg_.node_dim % cfg_.heads != 0)
    throw std::runtime_error("AdjacencyDenoiser: node_dim not divisible by heads");
  if (cfg_.time_dim % 2 != 0)
    throw std::runtime_error("AdjacencyDenoiser: time_dim must be even");
  Rng rng(seed, 0xDE02);
  const int nd = cfg_.node_dim, ed = cfg_.edge_dim;
  node_bbox_embed_ = Mlp<T>(ps_, "node_bbox_embed", {6, nd, nd}, rng);
  node_latent_embed_ = Mlp<T>(ps_, "node_latent_embed", {kSurfLatentDim, nd, nd}, rng);
  pair_embed_ = Mlp<T>(ps_, "pair_embed", {1, ed, ed}, rng);
  time_ = TimeEmbed<T>(ps_, "time", cfg_.time_dim, cfg_.time_dim, rng);
  for (int i = 0; i < cfg_.layers; ++i) {
    const std::string p = "layer" + std::to_string(i);
    Layer L;
    L.ln1 = LayerNorm<T>(ps_, p + ".ln1", nd);
    L.ln2 = LayerNorm<T>(ps_, p + ".ln2", nd);
    L.ln_e = LayerNorm<T>(ps_, p + ".ln_e", ed);
    L.wq = Linear<T>(ps_, p + ".q", nd, nd, rng);
    L.wk = Linear<T>(ps_, p + ".k", nd, nd, rng);
    L.wv = Linear<T>(ps_, p + ".v", nd, nd, rng);
    L.wo = Linear<T>(ps_, p + ".o", nd, nd, rng);
    L.ff = Mlp<T>(ps_, p + ".ff", {nd, 4 * nd, nd}, rng, Act::kGelu);
    L.edge_bias = Linear<T>(ps_, p + ".edge_bias", ed, cfg_.heads, rng);
    L.edge_update = Linear<T>(ps_, p + ".edge_update", 2 * nd + ed, ed, rng);
    L.film_scale = Linear<T>(ps_, p + ".film_scale", cfg_.time_dim, ed, rng);
    L.film_shift = Linear<T>(ps_, p + ".film_shift", cfg_.time_dim, ed, rng);
    layers_.push_back(std::move(L));
  }
  final_ln_ = LayerNorm<T>(ps_, "final_ln", ed);
  head_ = Linear<T>(ps_, "head", ed, 1, rng);
}

template <class T>
VarId AdjacencyDenoiser<T>::forward(Ctx<T>& c, VarId a, const std::vector<int>& t, VarId zs,
                                    VarId bs, const TensorT<T>& mask) const {
  const auto& av = c.tape.val(a);
  if (av.rank() != 3 || av.shape[1] != av.shape[2])
    throw std::runtime_error("AdjacencyDenoiser: input must be [B,n,n]");
  const int bsz = av.shape[0], n = av.shape[1];
  for (int b = 0; b < bsz; ++b)
    for (int i = 0; i < n; ++i) {
      if (av.at(b, i, i) != T(0))
        throw std::runtime_error("AdjacencyDenoiser: input diagonal must be zero");
      for (int j = i + 1; j < n; ++j)
        if (av.at(b, i, j) != av.at(b, j, i))
          throw std::runtime_error("AdjacencyDenoiser: input must be symmetric");
    }
  expect3(c.tape, zs, kSurfLatentDim, "AdjacencyDenoiser", "surface latents");
  expect3(c.tape, bs, 6, "AdjacencyDenoiser", "surface boxes");
  const auto& zv = c.tape.val(zs);
  const auto& bv = c.tape.val(bs);
  if (zv.shape[0] != bsz || zv.shape[1] != n || bv.shape[0] != bsz || bv.shape[1] != n)
    throw std::runtime_error("AdjacencyDenoiser: condition tokens misaligned with input");
  if (mask.shape != std::vector<int>{bsz, n})
    throw std::runtime_error("AdjacencyDenoiser: mask must be [B,n]");
  if (int(t.size()) != bsz)
    throw std::runtime_error("AdjacencyDenoiser: one timestep per batch item");

  VarId h = c.tape.add(node_bbox_embed_(c, bs), node_latent_embed_(c, zs));
  VarId e = pair_embed_(c, c.tape.reshape(a, {bsz, n, n, 1}));
  VarId y = time_(c, t);

  // padded key columns get a large negative logit shift
  TensorT<T> mask_add({bsz, cfg_.heads, n, n});
  for (int b = 0; b < bsz; ++b)
    for (int hh = 0; hh < cfg_.heads; ++hh)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          mask_add.at(b, hh, i, j) = mask.at(b, j) == T(0) ? T(-1e9) : T(0);

  for (const auto& L : layers_) {
    VarId hn = L.ln1(c, h);
    VarId q = L.wq(c, hn);
    VarId k = L.wk(c, hn);
    VarId v = L.wv(c, hn);
    VarId en = L.ln_e(c, e);
    // pairwise features shift the attention logits per head
    VarId bias = c.tape.pairs_to_heads(L.edge_bias(c, en));
    VarId att = c.tape.attention(c.tape.split_heads(q, cfg_.heads),
                                 c.tape.split_heads(k, cfg_.heads),
                                 c.tape.split_heads(v, cfg_.heads), bias, &mask_add);
    h = c.tape.add(h, L.wo(c, c.tape.merge_heads(att)));
    h = c.tape.add(h, L.ff(c, L.ln2(c, h)));
    // pairwise update from (Q_i, K_j, E_ij); timestep enters as a learned
    // scale-and-shift of the update
    VarId cat = c.tape.concat_last({c.tape.pair_rows(q), c.tape.pair_cols(k), en});
    VarId upd = c.tape.reshape(L.edge_update(c, cat), {bsz, n * n, cfg_.edge_dim});
    upd = c.tape.mul_bcast1(upd, c.tape.add_scalar(L.film_scale(c, y), T(1)));
    upd = c.tape.add_bcast1(upd, L.film_shift(c, y));
    upd = c.tape.reshape(upd, {bsz, n, n, cfg_.edge_dim});
    e = c.tape.add(e, c.tape.silu(upd));
  }

  VarId out = c.tape.reshape(head_(c, final_ln_(c, e)), {bsz, n, n});
  out = c.tape.add_transpose_nn(out);
  // zero the diagonal and every padded row/column
  TensorT<T> keep({bsz, n, n});
  for (int b = 0; b < bsz; ++b)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        keep.at(b, i, j) =
            (i != j && mask.at(b, i) != T(0) && mask.at(b, j) != T(0)) ? T(1) : T(0);
  return c.tape.mul_const(out, std::move(keep));
}

template <class T>
TensorT<T> AdjacencyDenoiser<T>::eval(const TensorT<T>& a, int t, const TensorT<T>& zs,
                                      const TensorT<T>& bs) const {
  if (a.rank() != 2) throw std::runtime_error("AdjacencyDenoiser: eval expects [n,n]");
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(ps_);
  Ctx<T> c{tape, ps, /*train=*/false};
  const TensorT<T> mask = TensorT<T>::full({1, a.shape[0]}, T(1));
  const VarId out = forward(c, tape.constant(lift(a)), {t}, tape.constant(lift(zs)),
                            tape.constant(lift(bs)), mask);
  TensorT<T> res = tape.val(out);
  check_finite(res, "adjacency eval");
  return squeeze0(res);
}

// ---- edge B-Box stage ----

namespace {

// gather indices and 0/1 conditioning mask for edge tokens: token k of item b
// reads surface rows slots[b][k]; padded tokens read row 0 and are masked off
template <class T>
void build_slot_gathers(const std::vector<EdgeSlots>& slots, int bsz, int m, int ns, int dim,
                        const char* who, std::vector<int>& gi, std::vector<int>& gj,
                        TensorT<T>& token_mask) {
  if (int(slots.size()) != bsz)
    throw std::runtime_error(std::string(who) + ": one slot list per batch item");
  gi.assign(size_t(bsz) * m, 0);
  gj.assign(size_t(bsz) * m, 0);
  token_mask = TensorT<T>({bsz, m, dim});
  for (int b = 0; b < bsz; ++b) {
    const EdgeSlots& sl = slots[size_t(b)];
    if (int(sl.size()) > m)
      throw std::runtime_error(std::string(who) + ": more slots than tokens");
    for (int k = 0; k < m; ++k) {
      const size_t at = size_t(b) * m + k;
      if (k < int(sl.size())) {
        const auto [i, j] = sl[size_t(k)];
        if (i < 0 || i >= ns || j < 0 || j >= ns)
          throw std::runtime_error(std::string(who) + ": slot index out of range");
        gi[at] = b * ns + i;
        gj[at] = b * ns + j;
        for (int d = 0; d < dim; ++d) token_mask.at(b, k, d) = T(1);
      } else {
        gi[at] = b * ns;
        gj[at] = b * ns;
      }
    }
  }
}

}  // namespace

template <class T>
EdgeBboxDenoiser<T>::EdgeBboxDenoiser(const EdgeDenoiserConfig& cfg, uint64_t seed) : cfg_(cfg) {
  check_edge_config(cfg_, "EdgeBboxDenoiser");
  Rng rng(seed, 0xDE03);
  const int d = cfg_.embed_dim;
  embed_ = Mlp<T>(ps_, "embed", {6, d, d}, rng);
  surf_bbox_mlp_ = Mlp<T>(ps_, "surf_bbox_mlp", {6, d, d}, rng);
  surf_latent_mlp_ = Mlp<T>(ps_, "surf_latent_mlp", {kSurfLatentDim, d, d}, rng);
  time_ = TimeEmbed<T>(ps_, "time", d, d, rng);
  label_ = Embedding<T>(ps_, "label", cfg_.num_labels + 1, d, rng);
  for (int i = 0; i < cfg_.layers; ++i)
    layers_.emplace_back(ps_, "enc" + std::to_string(i), d, cfg_.heads, 4, rng);
  final_ln_ = LayerNorm<T>(ps_, "final_ln", d);
  head_ = Linear<T>(ps_, "head", d, 6, rng);
}

template <class T>
VarId EdgeBboxDenoiser<T>::forward(Ctx<T>& c, VarId x, const std::vector<int>& t,
                                   const std::vector<EdgeSlots>& slots, VarId zs, VarId bs,
                                   const std::vector<int>& labels) const {
  expect3(c.tape, x, 6, "EdgeBboxDenoiser", "input");
  expect3(c.tape, zs, kSurfLatentDim, "EdgeBboxDenoiser", "surface latents");
  expect3(c.tape, bs, 6, "EdgeBboxDenoiser", "surface boxes");
  const auto& xv = c.tape.val(x);
  const auto& zv = c.tape.val(zs);
  const auto& bv = c.tape.val(bs);
  const int bsz = xv.shape[0], m = xv.shape[1], ns = zv.shape[1];
  if (zv.shape[0] != bsz || bv.shape[0] != bsz || bv.shape[1] != ns)
    throw std::runtime_error("EdgeBboxDenoiser: surface tensors misaligned");
  if (int(t.size()) != bsz)
    throw std::runtime_error("EdgeBboxDenoiser: one timestep per batch item");

  // shared per-surface features; both endpoints of an edge use the same map,
  // so summing them makes the (i,j) -> (j,i) swap an exact no-op
  VarId s = c.tape.add(surf_bbox_mlp_(c, bs), surf_latent_mlp_(c, zs));
  VarId y = c.tape.add(time_(c, t),
                       label_(c, label_rows(labels, bsz, cfg_.num_labels, "EdgeBboxDenoiser")));
  s = c.tape.add_bcast1(s, y);
  VarId flat = c.tape.reshape(s, {bsz * ns, cfg_.embed_dim});

  std::vector<int> gi, gj;
  TensorT<T> token_mask;
  build_slot_gathers(slots, bsz, m, ns, cfg_.embed_dim, "EdgeBboxDenoiser", gi, gj, token_mask);
  VarId cond = c.tape.add(c.tape.gather_rows(flat, gi), c.tape.gather_rows(flat, gj));
  cond = c.tape.mul_const(c.tape.reshape(cond, {bsz, m, cfg_.embed_dim}), std::move(token_mask));

  VarId h = c.tape.add(embed_(c, x), cond);
  for (const auto& layer : layers_) h = layer(c, h);
  return head_(c, final_ln_(c, h));
}

template <class T>
TensorT<T> EdgeBboxDenoiser<T>::eval(const TensorT<T>& x, int t, const EdgeSlots& slots,
                                     const TensorT<T>& zs, const TensorT<T>& bs,
                                     int label) const {
  if (x.rank() != 2 || x.shape[1] != 6)
    throw std::runtime_error("EdgeBboxDenoiser: eval expects [m,6]");
  const int m = x.shape[0];
  if (int(slots.size()) != m)
    throw std::runtime_error("EdgeBboxDenoiser: one slot pair per token");
  // pad to the trained token count so attention sees the training layout
  const int mp = std::max(m, cfg_.max_edges);
  const TensorT<T> xp = zero_pad_rows(x, mp);
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(ps_);
  Ctx<T> c{tape, ps, /*train=*/false};
  const VarId out = forward(c, tape.constant(lift(xp)), {t}, {slots}, tape.constant(lift(zs)),
                            tape.constant(lift(bs)), {label});
  TensorT<T> res = squeeze0(tape.val(out));
  check_finite(res, "edge bbox eval");
  TensorT<T> trimmed({m, 6});
  std::copy_n(res.data.begin(), size_t(m) * 6, trimmed.data.begin());
  return trimmed;
}

// ---- edge latent stage ----

template <class T>
EdgeLatentDenoiser<T>::EdgeLatentDenoiser(const EdgeDenoiserConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  check_edge_config(cfg_, "EdgeLatentDenoiser");
  Rng rng(seed, 0xDE04);
  const int d = cfg_.embed_dim;
  embed_ = Mlp<T>(ps_, "embed", {kLatentDim, d, d}, rng);
  ebox_embed_ = Mlp<T>(ps_, "ebox_embed", {6, d, d}, rng);
  surf_bbox_mlp_ = Mlp<T>(ps_, "surf_bbox_mlp", {6, d, d}, rng);
  surf_latent_mlp_ = Mlp<T>(ps_, "surf_latent_mlp", {kSurfLatentDim, d, d}, rng);
  time_ = TimeEmbed<T>(ps_, "time", d, d, rng);
  label_ = Embedding<T>(ps_, "label", cfg_.num_labels + 1, d, rng);
  for (int i = 0; i < cfg_.layers; ++i)
    layers_.emplace_back(ps_, "enc" + std::to_string(i), d, cfg_.heads, 4, rng);
  final_ln_ = LayerNorm<T>(ps_, "final_ln", d);
  head_ = Linear<T>(ps_, "head", d, kLatentDim, rng);
}

template <class T>
VarId EdgeLatentDenoiser<T>::forward(Ctx<T>& c, VarId z, const std::vector<int>& t, VarId be,
                                     const std::vector<EdgeSlots>& slots, VarId zs, VarId bs,
                                     const std::vector<int>& labels) const {
  expect3(c.tape, z, kLatentDim, "EdgeLatentDenoiser", "input");
  expect3(c.tape, be, 6, "EdgeLatentDenoiser", "edge boxes");
  expect3(c.tape, zs, kSurfLatentDim, "EdgeLatentDenoiser", "surface latents");
  expect3(c.tape, bs, 6, "EdgeLatentDenoiser", "surface boxes");
  const auto& zv = c.tape.val(z);
  const auto& ev = c.tape.val(be);
  const auto& sv = c.tape.val(zs);
  const auto& bv = c.tape.val(bs);
  const int bsz = zv.shape[0], m = zv.shape[1], ns = sv.shape[1];
  if (ev.shape[0] != bsz || ev.shape[1] != m)
    throw std::runtime_error("EdgeLatentDenoiser: edge boxes misaligned with input");
  if (sv.shape[0] != bsz || bv.shape[0] != bsz || bv.shape[1] != ns)
    throw std::runtime_error("EdgeLatentDenoiser: surface tensors misaligned");
  if (int(t.size()) != bsz)
    throw std::runtime_error("EdgeLatentDenoiser: one timestep per batch item");

  VarId s = c.tape.add(surf_bbox_mlp_(c, bs), surf_latent_mlp_(c, zs));
  VarId y = c.tape.add(time_(c, t),
                       label_(c, label_rows(labels, bsz, cfg_.num_labels, "EdgeLatentDenoiser")));
  s = c.tape.add_bcast1(s, y);
  VarId flat = c.tape.reshape(s, {bsz * ns, cfg_.embed_dim});

  std::vector<int> gi, gj;
  TensorT<T> token_mask;
  build_slot_gathers(slots, bsz, m, ns, cfg_.embed_dim, "EdgeLatentDenoiser", gi, gj, token_mask);
  VarId cond = c.tape.add(c.tape.gather_rows(flat, gi), c.tape.gather_rows(flat, gj));
  cond = c.tape.mul_const(c.tape.reshape(cond, {bsz, m, cfg_.embed_dim}), std::move(token_mask));

  VarId h = c.tape.add(c.tape.add(embed_(c, z), ebox_embed_(c, be)), cond);
  for (const auto& layer : layers_) h = layer(c, h);
  return head_(c, final_ln_(c, h));
}

template <class T>
TensorT<T> EdgeLatentDenoiser<T>::eval(const TensorT<T>& z, int t, const TensorT<T>& be,
                                       const EdgeSlots& slots, const TensorT<T>& zs,
                                       const TensorT<T>& bs, int label) const {
  if (z.rank() != 2 || z.shape[1] != kLatentDim)
    throw std::runtime_error("EdgeLatentDenoiser: eval expects [m,12]");
  const int m = z.shape[0];
  if (int(slots.size()) != m)
    throw std::runtime_error("EdgeLatentDenoiser: one slot pair per token");
  if (be.shape != std::vector<int>{m, 6})
    throw std::runtime_error("EdgeLatentDenoiser: edge boxes misaligned with input");
  const int mp = std::max(m, cfg_.max_edges);
  const TensorT<T> zp = zero_pad_rows(z, mp);
  const TensorT<T> ep = zero_pad_rows(be, mp);
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(ps_);
  Ctx<T> c{tape, ps, /*train=*/false};
  const VarId out = forward(c, tape.constant(lift(zp)), {t}, tape.constant(lift(ep)), {slots},
                            tape.constant(lift(zs)), tape.constant(lift(bs)), {label});
  TensorT<T> res = squeeze0(tape.val(out));
  check_finite(res, "edge latent eval");
  TensorT<T> trimmed({m, kLatentDim});
  std::copy_n(res.data.begin(), size_t(m) * kLatentDim, trimmed.data.begin());
  return trimmed;
}

// ---- guidance and padding ----

template <class T>
TensorT<T> cfg_epsilon(const TensorT<T>& eps_cond, const TensorT<T>& eps_uncond, double w) {
  if (!eps_cond.same_shape(eps_uncond))
    throw std::runtime_error("cfg_epsilon: shape mismatch");
  // keep the two endpoint weights exact
  if (w == 0.0) return eps_uncond;
  if (w == 1.0) return eps_cond;
  TensorT<T> out(eps_cond.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = T(double(eps_uncond[i]) + w * (double(eps_cond[i]) - double(eps_uncond[i])));
  return out;
}

template <class T>
TensorT<T> repeat_pad_rows(const TensorT<T>& x, int n_max) {
  if (x.rank() != 2) throw std::runtime_error("repeat_pad_rows: expected [n,d]");
  const int n = x.shape[0], d = x.shape[1];
  if (n_max < n) throw std::runtime_error("repeat_pad_rows: fewer slots than rows");
  TensorT<T> out({n_max, d});
  for (int i = 0; i < n_max; ++i)
    std::copy_n(x.data.data() + size_t(i % n) * d, d, out.data.data() + size_t(i) * d);
  return out;
}

template <class T>
TensorT<T> zero_pad_rows(const TensorT<T>& x, int n_max) {
  if (x.rank() != 2) throw std::runtime_error("zero_pad_rows: expected [n,d]");
  const int n = x.shape[0], d = x.shape[1];
  if (n_max < n) throw std::runtime_error("zero_pad_rows: fewer slots than rows");
  TensorT<T> out({n_max, d});
  std::copy_n(x.data.data(), size_t(n) * d, out.data.data());
  return out;
}

// ---- stage training ----

namespace {

template <class T>
void validate_graph_tensors(const std::vector<GraphTensors<T>>& data, int max_n, int max_m,
                            int num_labels) {
  if (data.empty()) throw std::runtime_error("train_stage: empty dataset");
  for (const auto& g : data) {
    if (g.bs.rank() != 2 || g.bs.shape[1] != 6)
      throw std::runtime_error("train_stage: surface boxes must be [n,6]");
    const int n = g.bs.shape[0];
    if (n > max_n) throw std::runtime_error("train_stage: item exceeds max_surfaces");
    if (g.zs.shape != std::vector<int>{n, 48})
      throw std::runtime_error("train_stage: surface latents must be [n,48]");
    if (g.adj.shape != std::vector<int>{n, n})
      throw std::runtime_error("train_stage: adjacency must be [n,n]");
    for (int i = 0; i < n; ++i) {
      if (g.adj.at(i, i) != T(0))
        throw std::runtime_error("train_stage: adjacency diagonal must be zero");
      for (int j = i + 1; j < n; ++j)
        if (g.adj.at(i, j) != g.adj.at(j, i))
          throw std::runtime_error("train_stage: adjacency must be symmetric");
    }
    const int m = int(g.slots.size());
    if (m > max_m) throw std::runtime_error("train_stage: item exceeds max_edges");
    if (m == 0) {
      if (g.be.numel() != 0 || g.ze.numel() != 0)
        throw std::runtime_error("train_stage: edge tensors must align with slots");
    } else {
      if (g.be.shape != std::vector<int>{m, 6} || g.ze.shape != std::vector<int>{m, 12})
        throw std::runtime_error("train_stage: edge tensors must align with slots");
    }
    for (const auto& [i, j] : g.slots)
      if (i < 0 || i >= n || j < 0 || j >= n)
        throw std::runtime_error("train_stage: slot index out of range");
    // unconditional stages ignore dataset labels entirely
    if (num_labels > 0 && (g.label < -1 || g.label >= num_labels))
      throw std::runtime_error("train_stage: item label out of range");
  }
}

int pick_label(int raw, int num_labels, double dropout, Rng& rng) {
  if (num_labels <= 0 || raw < 0) return -1;
  return rng.uniform() < dropout ? -1 : raw;
}

// shared optimizer loop; build() assembles one step's masked loss on the tape
template <class T, class BuildLoss>
StageTrainResult run_stage(ParamStore<T>& ps, const DiffusionSchedule& sched,
                           const StageTrainOptions& opt, BuildLoss&& build) {
  if (opt.steps < 1 || opt.batch < 1) throw std::runtime_error("train_stage: bad options");
  if (sched.T < 1) throw std::runtime_error("train_stage: bad schedule");
  Adam<T> adam(ps, T(opt.lr), T(0.9), T(0.99));
  StageTrainResult res;
  res.loss.reserve(size_t(opt.steps));
  const int warmup = std::max(1, opt.steps / 20);
  const int hold = opt.steps / 2;
  for (int step = 0; step < opt.steps; ++step) {
    // linear warmup, a flat stretch, then cosine decay almost to zero so the
    // late steps refine instead of undoing the fit
    double scale = 1.0;
    if (step < warmup) {
      scale = double(step + 1) / double(warmup);
    } else if (step >= hold) {
      const double prog = double(step - hold) / double(std::max(1, opt.steps - 1 - hold));
      scale = 0.002 + 0.998 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog));
    }
    adam.set_lr(T(opt.lr * scale));
    Rng rng(opt.seed, 0xD1F + uint64_t(step));
    Tape<T> tape;
    Ctx<T> c{tape, ps, /*train=*/true};
    const VarId loss = build(c, rng);
    const double now = double(tape.val(loss)[0]);
    if (!std::isfinite(now))
      throw std::runtime_error("train_stage: loss diverged at step " + std::to_string(step));
    tape.backward(loss);
    adam.step_from(c);
    res.loss.push_back(now);
  }
  return res;
}

}  // namespace

template <class T>
StageTrainResult train_stage(NodeBboxDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt) {
  const NodeDenoiserConfig& cfg = model.config();
  validate_graph_tensors(data, cfg.max_surfaces, INT32_MAX, cfg.num_labels);
  const int nmax = cfg.max_surfaces;
  auto build = [&](Ctx<T>& c, Rng& rng) -> VarId {
    TensorT<T> xt({opt.batch, nmax, 6}), eps({opt.batch, nmax, 6});
    std::vector<int> ts(size_t(opt.batch));
    std::vector<int> labels(size_t(opt.batch), -1);
    for (int k = 0; k < opt.batch; ++k) {
      const auto& g = data[size_t(rng.uniform_int(0, int(data.size()) - 1))];
      const TensorT<T> x0 = repeat_pad_rows(g.bs, nmax);
      const int tk = rng.uniform_int(1, sched.T);
      ts[size_t(k)] = tk;
      labels[size_t(k)] = pick_label(g.label, cfg.num_labels, opt.label_dropout, rng);
      const T sa = T(std::sqrt(sched.alpha_bar[size_t(tk)]));
      const T sb = T(std::sqrt(1.0 - sched.alpha_bar[size_t(tk)]));
      for (int64_t i = 0; i < x0.numel(); ++i) {
        const T e = T(rng.normal());
        eps[int64_t(k) * x0.numel() + i] = e;
        xt[int64_t(k) * x0.numel() + i] = sa * x0[i] + sb * e;
      }
    }
    const VarId pred = model.forward(c, c.tape.constant(std::move(xt)), ts, labels);
    return c.tape.mse(pred, c.tape.constant(std::move(eps)));
  };
  return run_stage(model.params(), sched, opt, build);
}

template <class T>
StageTrainResult train_stage(NodeLatentDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt) {
  const NodeDenoiserConfig& cfg = model.config();
  validate_graph_tensors(data, cfg.max_surfaces, INT32_MAX, cfg.num_labels);
  const int nmax = cfg.max_surfaces;
  auto build = [&](Ctx<T>& c, Rng& rng) -> VarId {
    TensorT<T> xt({opt.batch, nmax, 48}), eps({opt.batch, nmax, 48});
    TensorT<T> bs({opt.batch, nmax, 6});
    std::vector<int> ts(size_t(opt.batch));
    std::vector<int> labels(size_t(opt.batch), -1);
    for (int k = 0; k < opt.batch; ++k) {
      const auto& g = data[size_t(rng.uniform_int(0, int(data.size()) - 1))];
      // repeat padding keeps latent and box rows aligned token by token
      const TensorT<T> x0 = repeat_pad_rows(g.zs, nmax);
      const TensorT<T> cond = repeat_pad_rows(g.bs, nmax);
      const int tk = rng.uniform_int(1, sched.T);
      ts[size_t(k)] = tk;
      labels[size_t(k)] = pick_label(g.label, cfg.num_labels, opt.label_dropout, rng);
      const T sa = T(std::sqrt(sched.alpha_bar[size_t(tk)]));
      const T sb = T(std::sqrt(1.0 - sched.alpha_bar[size_t(tk)]));
      for (int64_t i = 0; i < x0.numel(); ++i) {
        const T e = T(rng.normal());
        eps[int64_t(k) * x0.numel() + i] = e;
        xt[int64_t(k) * x0.numel() + i] = sa * x0[i] + sb * e;
      }
      std::copy_n(cond.data.begin(), cond.numel(), bs.data.begin() + int64_t(k) * cond.numel());
    }
    const VarId pred = model.forward(c, c.tape.constant(std::move(xt)), ts,
                                     c.tape.constant(std::move(bs)), labels);
    return c.tape.mse(pred, c.tape.constant(std::move(eps)));
  };
  return run_stage(model.params(), sched, opt, build);
}

template <class T>
StageTrainResult train_stage(AdjacencyDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt) {
  const GraphDenoiserConfig& cfg = model.config();
  validate_graph_tensors(data, cfg.max_surfaces, INT32_MAX, 0);
  const int nmax = cfg.max_surfaces;
  auto build = [&](Ctx<T>& c, Rng& rng) -> VarId {
    TensorT<T> xt({opt.batch, nmax, nmax}), eps({opt.batch, nmax, nmax});
    TensorT<T> loss_mask({opt.batch, nmax, nmax});
    TensorT<T> row_mask({opt.batch, nmax});
    TensorT<T> zs({opt.batch, nmax, 48}), bs({opt.batch, nmax, 6});
    std::vector<int> ts(size_t(opt.batch));
    for (int k = 0; k < opt.batch; ++k) {
      const auto& g = data[size_t(rng.uniform_int(0, int(data.size()) - 1))];
      const int n = g.bs.shape[0];
      const int tk = rng.uniform_int(1, sched.T);
      ts[size_t(k)] = tk;
      const T sa = T(std::sqrt(sched.alpha_bar[size_t(tk)]));
      const T sb = T(std::sqrt(1.0 - sched.alpha_bar[size_t(tk)]));
      const TensorD noise = symmetric_noise(n, rng);
      for (int i = 0; i < n; ++i) {
        row_mask.at(k, i) = T(1);
        for (int j = 0; j < n; ++j) {
          const T e = T(noise.at(i, j));
          eps.at(k, i, j) = e;
          xt.at(k, i, j) = sa * g.adj.at(i, j) + sb * e;
          if (i != j) loss_mask.at(k, i, j) = T(1);
        }
      }
      for (int i = 0; i < n; ++i) {
        std::copy_n(&g.zs.at(i, 0), 48, &zs.at(k, i, 0));
        std::copy_n(&g.bs.at(i, 0), 6, &bs.at(k, i, 0));
      }
    }
    const VarId pred =
        model.forward(c, c.tape.constant(std::move(xt)), ts, c.tape.constant(std::move(zs)),
                      c.tape.constant(std::move(bs)), row_mask);
    return c.tape.mse(pred, c.tape.constant(std::move(eps)), &loss_mask);
  };
  return run_stage(model.params(), sched, opt, build);
}

template <class T>
StageTrainResult train_stage(EdgeBboxDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt) {
  const EdgeDenoiserConfig& cfg = model.config();
  validate_graph_tensors(data, INT32_MAX, cfg.max_edges, cfg.num_labels);
  const int mmax = cfg.max_edges;
  int ns = 0;  // pad surfaces to the widest item; slots only index real rows
  for (const auto& g : data) ns = std::max(ns, g.bs.shape[0]);
  auto build = [&, ns](Ctx<T>& c, Rng& rng) -> VarId {
    TensorT<T> xt({opt.batch, mmax, 6}), eps({opt.batch, mmax, 6});
    TensorT<T> loss_mask({opt.batch, mmax, 6});
    TensorT<T> zs({opt.batch, ns, 48}), bs({opt.batch, ns, 6});
    std::vector<EdgeSlots> slots(size_t(opt.batch));
    std::vector<int> ts(size_t(opt.batch));
    std::vector<int> labels(size_t(opt.batch), -1);
    for (int k = 0; k < opt.batch; ++k) {
      const auto& g = data[size_t(rng.uniform_int(0, int(data.size()) - 1))];
      const int n = g.bs.shape[0], m = int(g.slots.size());
      const int tk = rng.uniform_int(1, sched.T);
      ts[size_t(k)] = tk;
      labels[size_t(k)] = pick_label(g.label, cfg.num_labels, opt.label_dropout, rng);
      slots[size_t(k)] = g.slots;
      const T sa = T(std::sqrt(sched.alpha_bar[size_t(tk)]));
      const T sb = T(std::sqrt(1.0 - sched.alpha_bar[size_t(tk)]));
      for (int r = 0; r < m; ++r)
        for (int q = 0; q < 6; ++q) {
          const T e = T(rng.normal());
          eps.at(k, r, q) = e;
          xt.at(k, r, q) = sa * g.be.at(r, q) + sb * e;
          loss_mask.at(k, r, q) = T(1);
        }
      for (int i = 0; i < n; ++i) {
        std::copy_n(&g.zs.at(i, 0), 48, &zs.at(k, i, 0));
        std::copy_n(&g.bs.at(i, 0), 6, &bs.at(k, i, 0));
      }
    }
    const VarId pred =
        model.forward(c, c.tape.constant(std::move(xt)), ts, slots,
                      c.tape.constant(std::move(zs)), c.tape.constant(std::move(bs)), labels);
    return c.tape.mse(pred, c.tape.constant(std::move(eps)), &loss_mask);
  };
  return run_stage(model.params(), sched, opt, build);
}

template <class T>
StageTrainResult train_stage(EdgeLatentDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt) {
  const EdgeDenoiserConfig& cfg = model.config();
  validate_graph_tensors(data, INT32_MAX, cfg.max_edges, cfg.num_labels);
  const int mmax = cfg.max_edges;
  int ns = 0;
  for (const auto& g : data) ns = std::max(ns, g.bs.shape[0]);
  auto build = [&, ns](Ctx<T>& c, Rng& rng) -> VarId {
    TensorT<T> xt({opt.batch, mmax, 12}), eps({opt.batch, mmax, 12});
    TensorT<T> loss_mask({opt.batch, mmax, 12});
    TensorT<T> be({opt.batch, mmax, 6});
    TensorT<T> zs({opt.batch, ns, 48}), bs({opt.batch, ns, 6});
    std::vector<EdgeSlots> slots(size_t(opt.batch));
    std::vector<int> ts(size_t(opt.batch));
    std::vector<int> labels(size_t(opt.batch), -1);
    for (int k = 0; k < opt.batch; ++k) {
      const auto& g = data[size_t(rng.uniform_int(0, int(data.size()) - 1))];
      const int n = g.bs.shape[0], m = int(g.slots.size());
      const int tk = rng.uniform_int(1, sched.T);
      ts[size_t(k)] = tk;
      labels[size_t(k)] = pick_label(g.label, cfg.num_labels, opt.label_dropout, rng);
      slots[size_t(k)] = g.slots;
      const T sa = T(std::sqrt(sched.alpha_bar[size_t(tk)]));
      const T sb = T(std::sqrt(1.0 - sched.alpha_bar[size_t(tk)]));
      for (int r = 0; r < m; ++r) {
        for (int q = 0; q < 12; ++q) {
          const T e = T(rng.normal());
          eps.at(k, r, q) = e;
          xt.at(k, r, q) = sa * g.ze.at(r, q) + sb * e;
          loss_mask.at(k, r, q) = T(1);
        }
        std::copy_n(&g.be.at(r, 0), 6, &be.at(k, r, 0));
      }
      for (int i = 0; i < n; ++i) {
        std::copy_n(&g.zs.at(i, 0), 48, &zs.at(k, i, 0));
        std::copy_n(&g.bs.at(i, 0), 6, &bs.at(k, i, 0));
      }
    }
    const VarId pred = model.forward(c, c.tape.constant(std::move(xt)), ts,
                                     c.tape.constant(std::move(be)), slots,
                                     c.tape.constant(std::move(zs)),
                                     c.tape.constant(std::move(bs)), labels);
    return c.tape.mse(pred, c.tape.constant(std::move(eps)), &loss_mask);
  };
  return run_stage(model.params(), sched, opt, build);
}

template class NodeBboxDenoiser<float>;
template class NodeBboxDenoiser<double>;
template class NodeLatentDenoiser<float>;
template class NodeLatentDenoiser<double>;
template class AdjacencyDenoiser<float>;
template class AdjacencyDenoiser<double>;
template class EdgeBboxDenoiser<float>;
template class EdgeBboxDenoiser<double>;
template class EdgeLatentDenoiser<float>;
template class EdgeLatentDenoiser<double>;

template TensorT<float> cfg_epsilon<float>(const TensorT<float>&, const TensorT<float>&, double);
template TensorT<double> cfg_epsilon<double>(const TensorT<double>&, const TensorT<double>&,
                                             double);
template TensorT<float> repeat_pad_rows<float>(const TensorT<float>&, int);
template TensorT<double> repeat_pad_rows<double>(const TensorT<double>&, int);
template TensorT<float> zero_pad_rows<float>(const TensorT<float>&, int);
template TensorT<double> zero_pad_rows<double>(const TensorT<double>&, int);

template StageTrainResult train_stage<float>(NodeBboxDenoiser<float>&,
                                             const std::vector<GraphTensors<float>>&,
                                             const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<double>(NodeBboxDenoiser<double>&,
                                              const std::vector<GraphTensors<double>>&,
                                              const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<float>(NodeLatentDenoiser<float>&,
                                             const std::vector<GraphTensors<float>>&,
                                             const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<double>(NodeLatentDenoiser<double>&,
                                              const std::vector<GraphTensors<double>>&,
                                              const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<float>(AdjacencyDenoiser<float>&,
                                             const std::vector<GraphTensors<float>>&,
                                             const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<double>(AdjacencyDenoiser<double>&,
                                              const std::vector<GraphTensors<double>>&,
                                              const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<float>(EdgeBboxDenoiser<float>&,
                                             const std::vector<GraphTensors<float>>&,
                                             const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<double>(EdgeBboxDenoiser<double>&,
                                              const std::vector<GraphTensors<double>>&,
                                              const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<float>(EdgeLatentDenoiser<float>&,
                                             const std::vector<GraphTensors<float>>&,
                                             const DiffusionSchedule&, const StageTrainOptions&);
template StageTrainResult train_stage<double>(EdgeLatentDenoiser<double>&,
                                              const std::vector<GraphTensors<double>>&,
                                              const DiffusionSchedule&, const StageTrainOptions&);

}  // namespace gbrep
