#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gbrep/diffusion.hpp"
#include "gbrep/nn.hpp"
#include "gbrep/rng.hpp"
#include "gbrep/tape.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

// Desk-scale defaults; the reference dims (embed 1024 / node 768 / edge 64 /
// time 128) remain reachable through these fields. embed_dim must divide by
// heads, hence 120 rather than 128 at 12 heads.
struct NodeDenoiserConfig {
  int layers = 12;
  int heads = 12;
  int embed_dim = 120;
  int max_surfaces = 30;
  int num_labels = 0;  // 0 = unconditional; otherwise ids 0..num_labels-1
};

struct EdgeDenoiserConfig {
  int layers = 12;
  int heads = 12;
  int embed_dim = 120;
  int max_edges = 120;
  int num_labels = 0;
};

struct GraphDenoiserConfig {
  int layers = 6;
  int heads = 6;
  int node_dim = 96;
  int edge_dim = 16;
  int time_dim = 32;
  int max_surfaces = 30;
};

// Token slots for the edge stages: which surface pair each edge connects.
using EdgeSlots = std::vector<std::pair<int, int>>;

// Predicts the noise on surface bounding boxes. Tokens are a set: per-token
// MLP embedding plus additive time/label vectors, encoder layers, linear head.
// No positional encoding anywhere, so token permutations commute with the map.
template <class T>
class NodeBboxDenoiser {
 public:
  using Scalar = T;

  explicit NodeBboxDenoiser(const NodeDenoiserConfig& cfg = {}, uint64_t seed = 0);

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const NodeDenoiserConfig& config() const { return cfg_; }

  // x [B,n,6]; t one timestep per batch item; labels empty or one id per item
  // with -1 meaning unconditional
  VarId forward(Ctx<T>& c, VarId x, const std::vector<int>& t,
                const std::vector<int>& labels = {}) const;
  TensorT<T> eval(const TensorT<T>& x, int t, int label = -1) const;

 private:
  NodeDenoiserConfig cfg_;
  ParamStore<T> ps_;
  Mlp<T> embed_;
  TimeEmbed<T> time_;
  Embedding<T> label_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
};

// Predicts the noise on surface latents, conditioned per token on the clean
// surface bounding box.
template <class T>
class NodeLatentDenoiser {
 public:
  using Scalar = T;
  static constexpr int kLatentDim = 48;

  explicit NodeLatentDenoiser(const NodeDenoiserConfig& cfg = {}, uint64_t seed = 0);

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const NodeDenoiserConfig& config() const { return cfg_; }

  // z [B,n,48]; bs [B,n,6] clean boxes aligned with z tokens
  VarId forward(Ctx<T>& c, VarId z, const std::vector<int>& t, VarId bs,
                const std::vector<int>& labels = {}) const;
  TensorT<T> eval(const TensorT<T>& z, int t, const TensorT<T>& bs, int label = -1) const;

 private:
  NodeDenoiserConfig cfg_;
  ParamStore<T> ps_;
  Mlp<T> embed_, bbox_embed_;
  TimeEmbed<T> time_;
  Embedding<T> label_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
};

// Graph-transformer denoiser for the adjacency matrix. Node features come
// from the clean surface tensors; pairwise features start from the noisy
// counts, modulate the attention logits additively, and are updated each
// layer from (Q_i, K_j, E_ij) with the time embedding applied as a learned
// scale-and-shift. The head maps pairwise features to a scalar matrix that is
// added to its own transpose, so the output is symmetric by construction.
template <class T>
class AdjacencyDenoiser {
 public:
  using Scalar = T;
  static constexpr int kSurfLatentDim = 48;

  explicit AdjacencyDenoiser(const GraphDenoiserConfig& cfg = {}, uint64_t seed = 0);

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const GraphDenoiserConfig& config() const { return cfg_; }

  // a [B,n,n] symmetric with zero diagonal (rejected otherwise); zs [B,n,48],
  // bs [B,n,6] clean conditions; mask [B,n] marks real (1) vs padded (0) rows
  VarId forward(Ctx<T>& c, VarId a, const std::vector<int>& t, VarId zs, VarId bs,
                const TensorT<T>& mask) const;
  TensorT<T> eval(const TensorT<T>& a, int t, const TensorT<T>& zs,
                  const TensorT<T>& bs) const;

 private:
  GraphDenoiserConfig cfg_;
  ParamStore<T> ps_;
  Mlp<T> node_bbox_embed_, node_latent_embed_, pair_embed_;
  TimeEmbed<T> time_;
  struct Layer {
    LayerNorm<T> ln1, ln2, ln_e;
    Linear<T> wq, wk, wv, wo;
    Mlp<T> ff;
    Linear<T> edge_bias;    // pairwise features -> per-head logit offsets
    Linear<T> edge_update;  // [q_i, k_j, e_ij] -> edge_dim
    Linear<T> film_scale, film_shift;
  };
  std::vector<Layer> layers_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
};

// Predicts the noise on edge bounding boxes. Each real token k for slot (i,j)
// receives s_i + s_j where s is a shared per-surface feature built from the
// clean surface tensors and the timestep; the shared map makes the endpoint
// swap (i,j)->(j,i) an exact no-op.
template <class T>
class EdgeBboxDenoiser {
 public:
  using Scalar = T;
  static constexpr int kSurfLatentDim = 48;

  explicit EdgeBboxDenoiser(const EdgeDenoiserConfig& cfg = {}, uint64_t seed = 0);

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const EdgeDenoiserConfig& config() const { return cfg_; }

  // x [B,m,6] zero-padded beyond each item's slot count; slots[b] lists the
  // real edges of item b as surface-index pairs into zs/bs rows
  VarId forward(Ctx<T>& c, VarId x, const std::vector<int>& t,
                const std::vector<EdgeSlots>& slots, VarId zs, VarId bs,
                const std::vector<int>& labels = {}) const;
  TensorT<T> eval(const TensorT<T>& x, int t, const EdgeSlots& slots, const TensorT<T>& zs,
                  const TensorT<T>& bs, int label = -1) const;

 private:
  EdgeDenoiserConfig cfg_;
  ParamStore<T> ps_;
  Mlp<T> embed_, surf_bbox_mlp_, surf_latent_mlp_;
  TimeEmbed<T> time_;
  Embedding<T> label_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
};

// Predicts the noise on edge latents; like the box stage plus a per-token
// embedding of the clean edge bounding box.
template <class T>
class EdgeLatentDenoiser {
 public:
  using Scalar = T;
  static constexpr int kLatentDim = 12;
  static constexpr int kSurfLatentDim = 48;

  explicit EdgeLatentDenoiser(const EdgeDenoiserConfig& cfg = {}, uint64_t seed = 0);

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const EdgeDenoiserConfig& config() const { return cfg_; }

  VarId forward(Ctx<T>& c, VarId z, const std::vector<int>& t, VarId be,
                const std::vector<EdgeSlots>& slots, VarId zs, VarId bs,
                const std::vector<int>& labels = {}) const;
  TensorT<T> eval(const TensorT<T>& z, int t, const TensorT<T>& be, const EdgeSlots& slots,
                  const TensorT<T>& zs, const TensorT<T>& bs, int label = -1) const;

 private:
  EdgeDenoiserConfig cfg_;
  ParamStore<T> ps_;
  Mlp<T> embed_, ebox_embed_, surf_bbox_mlp_, surf_latent_mlp_;
  TimeEmbed<T> time_;
  Embedding<T> label_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
};

// Classifier-free guidance blend.
template <class T>
TensorT<T> cfg_epsilon(const TensorT<T>& eps_cond, const TensorT<T>& eps_uncond, double w);

// Per-solid training tensors with real (unpadded) counts; the stage trainers
// apply the padding policy (repeat for surfaces, zero+mask for edges and the
// adjacency matrix).
template <class T>
struct GraphTensors {
  TensorT<T> bs;    // [n,6] surface boxes
  TensorT<T> zs;    // [n,48] surface latents
  TensorT<T> adj;   // [n,n] raw edge counts
  EdgeSlots slots;  // real edges (i<j)
  TensorT<T> be;    // [m,6] edge boxes, row k for slots[k]
  TensorT<T> ze;    // [m,12] edge latents
  int label = -1;
};

struct StageTrainOptions {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  double label_dropout = 0.1;  // chance a labeled item trains unconditionally
  uint64_t seed = 0;
};

struct StageTrainResult {
  std::vector<double> loss;  // per-step training loss
};

template <class T>
StageTrainResult train_stage(NodeBboxDenoiser<T>& model, const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt);
template <class T>
StageTrainResult train_stage(NodeLatentDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt);
template <class T>
StageTrainResult train_stage(AdjacencyDenoiser<T>& model, const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt);
template <class T>
StageTrainResult train_stage(EdgeBboxDenoiser<T>& model, const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt);
template <class T>
StageTrainResult train_stage(EdgeLatentDenoiser<T>& model,
                             const std::vector<GraphTensors<T>>& data,
                             const DiffusionSchedule& sched, const StageTrainOptions& opt);

// Repeat-pad rows of a [n,d] tensor to n_max by cycling (row i -> i % n);
// zero_pad_rows appends zero rows instead.
template <class T>
TensorT<T> repeat_pad_rows(const TensorT<T>& x, int n_max);
template <class T>
TensorT<T> zero_pad_rows(const TensorT<T>& x, int n_max);

}  // namespace gbrep
