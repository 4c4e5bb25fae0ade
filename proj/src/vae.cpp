#include "gbrep/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gbrep {

namespace {

// stack selected items (all the same shape) into one batch tensor
template <class T>
TensorT<T> stack(const std::vector<TensorT<T>>& data, const std::vector<int>& idx) {
  std::vector<int> shape = data[idx[0]].shape;
  shape.insert(shape.begin(), int(idx.size()));
  TensorT<T> out(shape);
  const int64_t item = data[idx[0]].numel();
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto& src = data[idx[k]];
    if (src.numel() != item) throw std::runtime_error("train_vae: ragged dataset");
    std::copy(src.data.begin(), src.data.end(), out.data.begin() + int64_t(k) * item);
  }
  return out;
}

template <class T>
TensorT<T> with_batch(const TensorT<T>& x, bool& had_batch, int batched_rank) {
  had_batch = x.rank() == batched_rank;
  if (had_batch) return x;
  std::vector<int> shape = x.shape;
  shape.insert(shape.begin(), 1);
  return TensorT<T>(shape, x.data);
}

template <class T>
TensorT<T> drop_batch(TensorT<T> x, bool had_batch) {
  if (had_batch) return x;
  std::vector<int> shape(x.shape.begin() + 1, x.shape.end());
  return TensorT<T>(shape, x.data);
}

// shared eval-mode forward: encode with no grad, return (mean, logvar)
template <class Vae, class T>
std::pair<TensorT<T>, TensorT<T>> encode_no_grad(const Vae& vae, const TensorT<T>& x,
                                                 int batched_rank) {
  bool had_batch = false;
  const TensorT<T> xb = with_batch(x, had_batch, batched_rank);
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(vae.params());
  Ctx<T> c{tape, ps, /*train=*/false};
  const VarId xv = tape.constant(xb);
  auto [mean, logvar] = vae.encode(c, xv);
  TensorT<T> m = tape.val(mean), lv = tape.val(logvar);
  check_finite(m, "encode mean");
  check_finite(lv, "encode logvar");
  return {drop_batch(std::move(m), had_batch), drop_batch(std::move(lv), had_batch)};
}

template <class Vae, class T>
TensorT<T> decode_no_grad(const Vae& vae, const TensorT<T>& z, int batched_rank) {
  bool had_batch = false;
  const TensorT<T> zb = with_batch(z, had_batch, batched_rank);
  Tape<T> tape;
  ParamStore<T>& ps = const_cast<ParamStore<T>&>(vae.params());
  Ctx<T> c{tape, ps, /*train=*/false};
  TensorT<T> out = tape.val(vae.decode(c, tape.constant(zb)));
  check_finite(out, "decode output");
  return drop_batch(std::move(out), had_batch);
}

}  // namespace

template <class T>
std::pair<TensorT<T>, TensorT<T>> SurfVaeT<T>::encode_eval(const TensorT<T>& x) const {
  return encode_no_grad<SurfVaeT<T>, T>(*this, x, 4);
}

template <class T>
TensorT<T> SurfVaeT<T>::decode_eval(const TensorT<T>& z) const {
  return decode_no_grad<SurfVaeT<T>, T>(*this, z, 4);
}

template <class T>
std::pair<TensorT<T>, TensorT<T>> EdgeVaeT<T>::encode_eval(const TensorT<T>& x) const {
  return encode_no_grad<EdgeVaeT<T>, T>(*this, x, 3);
}

template <class T>
TensorT<T> EdgeVaeT<T>::decode_eval(const TensorT<T>& z) const {
  return decode_no_grad<EdgeVaeT<T>, T>(*this, z, 3);
}

template <class T>
TensorT<T> reparameterize(const TensorT<T>& mean, const TensorT<T>& logvar, Rng& rng) {
  if (!mean.same_shape(logvar)) throw std::runtime_error("reparameterize: shape mismatch");
  TensorT<T> z(mean.shape);
  for (int64_t i = 0; i < z.numel(); ++i) {
    const double lv = std::min(kLogvarMax, std::max(kLogvarMin, double(logvar[i])));
    z[i] = mean[i] + T(std::exp(0.5 * lv) * rng.normal());
  }
  return z;
}

template <class T>
double vae_loss(const TensorT<T>& x, const TensorT<T>& xhat, const TensorT<T>& mean,
                const TensorT<T>& logvar, double kl_weight) {
  if (!x.same_shape(xhat)) throw std::runtime_error("vae_loss: shape mismatch");
  if (!mean.same_shape(logvar)) throw std::runtime_error("vae_loss: shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = double(xhat[i]) - double(x[i]);
    mse += d * d;
  }
  mse /= double(x.numel());
  double kl = 0;
  for (int64_t i = 0; i < mean.numel(); ++i) {
    const double m = mean[i], lv = logvar[i];
    kl += 0.5 * (std::exp(lv) + m * m - 1.0 - lv);
  }
  kl /= double(mean.numel());
  return mse + kl_weight * kl;
}

namespace {

// one eval-mode probe pass: total loss and reconstruction mse at z = mean
template <class Vae, class T>
std::pair<double, double> probe_loss(const Vae& vae, const std::vector<TensorT<T>>& data,
                                     const std::vector<int>& probe, double kl_weight) {
  const TensorT<T> x = stack(data, probe);
  auto [mean, logvar] = vae.encode_eval(x);
  const TensorT<T> xhat = vae.decode_eval(mean);
  double mse = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = double(xhat[i]) - double(x[i]);
    mse += d * d;
  }
  mse /= double(x.numel());
  return {vae_loss(x, xhat, mean, logvar, kl_weight), mse};
}

}  // namespace

template <class Vae>
VaeTrainResult train_vae(Vae& vae, const std::vector<TensorT<typename Vae::Scalar>>& data,
                         const VaeTrainOptions& opt) {
  using T = typename Vae::Scalar;
  if (data.empty()) throw std::runtime_error("train_vae: empty dataset");
  if (opt.epochs < 1 || opt.batch < 1) throw std::runtime_error("train_vae: bad options");
  const int n = int(data.size());
  const int batch = std::min(opt.batch, n);

  Adam<T> adam(vae.params(), opt.lr);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> probe(std::min(n, 4 * batch));
  std::iota(probe.begin(), probe.end(), 0);

  VaeTrainResult res;
  int64_t step = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    Rng shuffle_rng(opt.seed, 0xA11 + uint64_t(epoch));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[size_t(shuffle_rng.uniform_int(0, i))]);
    for (int start = 0; start < n; start += batch, ++step) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min(n, start + batch));
      const TensorT<T> xb = stack(data, idx);

      Tape<T> tape;
      Ctx<T> c{tape, vae.params(), /*train=*/true};
      const VarId x = tape.constant(xb);
      auto [mean, logvar] = vae.encode(c, x);

      Rng noise_rng(opt.seed, 0xB00 + uint64_t(step));
      const TensorT<T> eps = TensorT<T>::randn(tape.val(mean).shape, noise_rng);
      const VarId z =
          tape.add(mean, tape.mul(tape.exp_op(tape.scale(logvar, T(0.5))), tape.constant(eps)));
      const VarId xhat = vae.decode(c, z);

      const VarId mse = tape.mse(xhat, x);
      VarId kl = tape.sub(tape.add(tape.exp_op(logvar), tape.mul(mean, mean)), logvar);
      kl = tape.scale(tape.mean_all(tape.add_scalar(kl, T(-1))), T(0.5));
      const VarId total = tape.add(mse, tape.scale(kl, T(opt.kl_weight)));

      const double loss_now = double(tape.val(total)[0]);
      if (!std::isfinite(loss_now))
        throw std::runtime_error("train_vae: loss diverged at step " + std::to_string(step));
      tape.backward(total);
      adam.step_from(c);
    }
    auto [loss, mse] = probe_loss<Vae, T>(vae, data, probe, opt.kl_weight);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_vae: probe loss diverged after epoch " +
                               std::to_string(epoch));
    res.loss.push_back(loss);
    res.recon_mse.push_back(mse);
  }
  return res;
}

template class SurfVaeT<float>;
template class SurfVaeT<double>;
template class EdgeVaeT<float>;
template class EdgeVaeT<double>;
template TensorT<float> reparameterize<float>(const TensorT<float>&, const TensorT<float>&, Rng&);
template TensorT<double> reparameterize<double>(const TensorT<double>&, const TensorT<double>&,
                                                Rng&);
template double vae_loss<float>(const TensorT<float>&, const TensorT<float>&,
                                const TensorT<float>&, const TensorT<float>&, double);
template double vae_loss<double>(const TensorT<double>&, const TensorT<double>&,
                                 const TensorT<double>&, const TensorT<double>&, double);
template VaeTrainResult train_vae<SurfVaeT<float>>(SurfVaeT<float>&,
                                                   const std::vector<TensorT<float>>&,
                                                   const VaeTrainOptions&);
template VaeTrainResult train_vae<SurfVaeT<double>>(SurfVaeT<double>&,
                                                    const std::vector<TensorT<double>>&,
                                                    const VaeTrainOptions&);
template VaeTrainResult train_vae<EdgeVaeT<float>>(EdgeVaeT<float>&,
                                                   const std::vector<TensorT<float>>&,
                                                   const VaeTrainOptions&);
template VaeTrainResult train_vae<EdgeVaeT<double>>(EdgeVaeT<double>&,
                                                    const std::vector<TensorT<double>>&,
                                                    const VaeTrainOptions&);

}  // namespace gbrep
