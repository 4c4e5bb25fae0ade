#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gbrep/adam.hpp"
#include "gbrep/nn.hpp"
#include "gbrep/rng.hpp"
#include "gbrep/tape.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

// Surface autoencoder: [B,32,32,3] grids <-> [B,4,4,3] latents. Four stride-2
// blocks take the grid to 2x2; a linear head bridges the flattened features to
// the latent, and the decoder mirrors the path with nearest-neighbor upsamples.
template <class T>
class SurfVaeT {
 public:
  using Scalar = T;
  static constexpr int kGrid = 32;
  static constexpr int kLatSide = 4;
  static constexpr int kLatC = 3;

  explicit SurfVaeT(std::vector<int> widths = {16, 32, 64, 64}, uint64_t seed = 0)
      : widths_(std::move(widths)) {
    if (widths_.size() != 4) throw std::runtime_error("SurfVae: expected 4 channel widths");
    Rng rng(seed, 0x5AE0);
    int cin = 3;
    for (int i = 0; i < 4; ++i) {
      enc_.emplace_back(ps_, "enc" + std::to_string(i), 3, 3, cin, widths_[i], rng);
      enc_ln_.emplace_back(ps_, "enc" + std::to_string(i) + ".ln", widths_[i]);
      cin = widths_[i];
    }
    const int flat = 2 * 2 * widths_[3];
    const int lat = kLatSide * kLatSide * kLatC;
    head_mean_ = Linear<T>(ps_, "head_mean", flat, lat, rng);
    head_logvar_ = Linear<T>(ps_, "head_logvar", flat, lat, rng);
    // start near-deterministic: a posterior stddev of ~e^-3 keeps early latent
    // noise from drowning the reconstruction signal
    for (auto& v : ps_.get("head_logvar.b").data) v = T(-6);
    bridge_ = Linear<T>(ps_, "bridge", lat, flat, rng);
    const int dw[4] = {widths_[2], widths_[1], widths_[0], widths_[0]};
    cin = widths_[3];
    for (int i = 0; i < 4; ++i) {
      dec_.emplace_back(ps_, "dec" + std::to_string(i), 3, 3, cin, dw[i], rng);
      cin = dw[i];
    }
    out_ = Conv2d<T>(ps_, "out", 3, 3, widths_[0], 3, rng);
  }

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const std::vector<int>& widths() const { return widths_; }

  // mean, logvar of shape [B,4,4,3]; logvar clamped for numerical safety
  std::pair<VarId, VarId> encode(Ctx<T>& c, VarId x) const {
    const int b = c.tape.val(x).shape[0];
    for (int i = 0; i < 4; ++i) {
      x = enc_[i](c, x, /*stride=*/2, /*pad=*/1);
      x = c.tape.silu(x);
      x = enc_ln_[i](c, x);
    }
    x = c.tape.reshape(x, {b, 2 * 2 * widths_[3]});
    VarId mean = c.tape.reshape(head_mean_(c, x), {b, kLatSide, kLatSide, kLatC});
    VarId logvar = c.tape.clamp(head_logvar_(c, x), T(kLogvarMin), T(kLogvarMax));
    logvar = c.tape.reshape(logvar, {b, kLatSide, kLatSide, kLatC});
    return {mean, logvar};
  }

  VarId decode(Ctx<T>& c, VarId z) const {
    const int b = c.tape.val(z).shape[0];
    VarId x = c.tape.reshape(z, {b, kLatSide * kLatSide * kLatC});
    x = bridge_(c, x);
    x = c.tape.reshape(x, {b, 2, 2, widths_[3]});
    for (int i = 0; i < 4; ++i) {
      x = c.tape.upsample2x_2d(x);
      x = dec_[i](c, x, /*stride=*/1, /*pad=*/1);
      x = c.tape.silu(x);
    }
    x = out_(c, x, /*stride=*/1, /*pad=*/1);
    return c.tape.tanh_op(x);
  }

  std::pair<TensorT<T>, TensorT<T>> encode_eval(const TensorT<T>& x) const;
  TensorT<T> decode_eval(const TensorT<T>& z) const;

 private:
  std::vector<int> widths_;
  ParamStore<T> ps_;
  std::vector<Conv2d<T>> enc_;
  std::vector<LayerNorm<T>> enc_ln_;
  Linear<T> head_mean_, head_logvar_, bridge_;
  std::vector<Conv2d<T>> dec_;  // decoder blocks skip normalization: exact
                                // magnitudes decode faster without re-learning
                                // them through gain parameters
  Conv2d<T> out_;
};

// Edge autoencoder: [B,32,3] polylines <-> [B,4,3] latents. Three stride-2
// blocks land on length 4, matching the latent length, so the heads act per
// position; the decoder bridges to length 2 and climbs back with 4 upsamples.
template <class T>
class EdgeVaeT {
 public:
  using Scalar = T;
  static constexpr int kPoints = 32;
  static constexpr int kLatLen = 4;
  static constexpr int kLatC = 3;

  explicit EdgeVaeT(std::vector<int> widths = {16, 32, 64}, uint64_t seed = 0)
      : widths_(std::move(widths)) {
    if (widths_.size() != 3) throw std::runtime_error("EdgeVae: expected 3 channel widths");
    Rng rng(seed, 0x5AE1);
    int cin = 3;
    for (int i = 0; i < 3; ++i) {
      enc_.emplace_back(ps_, "enc" + std::to_string(i), 3, cin, widths_[i], rng);
      enc_ln_.emplace_back(ps_, "enc" + std::to_string(i) + ".ln", widths_[i]);
      cin = widths_[i];
    }
    head_mean_ = Linear<T>(ps_, "head_mean", widths_[2], kLatC, rng);
    head_logvar_ = Linear<T>(ps_, "head_logvar", widths_[2], kLatC, rng);
    for (auto& v : ps_.get("head_logvar.b").data) v = T(-6);
    bridge_ = Linear<T>(ps_, "bridge", kLatLen * kLatC, 2 * widths_[2], rng);
    const int dw[4] = {widths_[2], widths_[1], widths_[0], widths_[0]};
    cin = widths_[2];
    for (int i = 0; i < 4; ++i) {
      dec_.emplace_back(ps_, "dec" + std::to_string(i), 3, cin, dw[i], rng);
      cin = dw[i];
    }
    out_ = Conv1d<T>(ps_, "out", 3, widths_[0], 3, rng);
  }

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const std::vector<int>& widths() const { return widths_; }

  std::pair<VarId, VarId> encode(Ctx<T>& c, VarId x) const {
    for (int i = 0; i < 3; ++i) {
      x = enc_[i](c, x, /*stride=*/2, /*pad=*/1);
      x = c.tape.silu(x);
      x = enc_ln_[i](c, x);
    }
    VarId mean = head_mean_(c, x);  // per-position head on [B,4,C]
    VarId logvar = c.tape.clamp(head_logvar_(c, x), T(kLogvarMin), T(kLogvarMax));
    return {mean, logvar};
  }

  VarId decode(Ctx<T>& c, VarId z) const {
    const int b = c.tape.val(z).shape[0];
    VarId x = c.tape.reshape(z, {b, kLatLen * kLatC});
    x = bridge_(c, x);
    x = c.tape.reshape(x, {b, 2, widths_[2]});
    for (int i = 0; i < 4; ++i) {
      x = c.tape.upsample2x_1d(x);
      x = dec_[i](c, x, /*stride=*/1, /*pad=*/1);
      x = c.tape.silu(x);
    }
    x = out_(c, x, /*stride=*/1, /*pad=*/1);
    return c.tape.tanh_op(x);
  }

  std::pair<TensorT<T>, TensorT<T>> encode_eval(const TensorT<T>& x) const;
  TensorT<T> decode_eval(const TensorT<T>& z) const;

 private:
  std::vector<int> widths_;
  ParamStore<T> ps_;
  std::vector<Conv1d<T>> enc_;
  std::vector<LayerNorm<T>> enc_ln_;
  Linear<T> head_mean_, head_logvar_, bridge_;
  std::vector<Conv1d<T>> dec_;
  Conv1d<T> out_;
};

using SurfVae = SurfVaeT<float>;
using EdgeVae = EdgeVaeT<float>;

// z = mean + exp(logvar/2) * eps with eps ~ N(0,I); logvar is clamped first.
template <class T>
TensorT<T> reparameterize(const TensorT<T>& mean, const TensorT<T>& logvar, Rng& rng);

// mse(xhat, x) + kl_weight * mean(0.5*(exp(logvar) + mean^2 - 1 - logvar))
template <class T>
double vae_loss(const TensorT<T>& x, const TensorT<T>& xhat, const TensorT<T>& mean,
                const TensorT<T>& logvar, double kl_weight);

struct VaeTrainOptions {
  int epochs = 50;
  int batch = 16;
  double lr = 5e-4;
  double kl_weight = 1e-6;
  uint64_t seed = 0;
};

struct VaeTrainResult {
  // both curves are eval-mode probes (z = posterior mean) on a fixed leading
  // slice of the dataset, so lr=0 gives bitwise-constant curves
  std::vector<double> loss;
  std::vector<double> recon_mse;
};

template <class Vae>
VaeTrainResult train_vae(Vae& vae, const std::vector<TensorT<typename Vae::Scalar>>& data,
                         const VaeTrainOptions& opt);

}  // namespace gbrep
