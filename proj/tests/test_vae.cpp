#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include "gbrep/vae.hpp"

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "gbrep/gradcheck.hpp"

using namespace gbrep;

namespace {

// linear x/y ramps with z = 0: a flat plane patch in normalized coordinates
template <class T>
TensorT<T> plane_grid() {
  TensorT<T> g({32, 32, 3});
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      g.at(i, j, 0) = T(-0.9 + 1.8 * i / 31.0);
      g.at(i, j, 1) = T(-0.9 + 1.8 * j / 31.0);
      g.at(i, j, 2) = T(0);
    }
  return g;
}

template <class T>
TensorT<T> line_points() {
  TensorT<T> p({32, 3});
  for (int i = 0; i < 32; ++i) {
    p.at(i, 0) = T(-0.8 + 1.6 * i / 31.0);
    p.at(i, 1) = T(0.5 - 0.9 * i / 31.0);
    p.at(i, 2) = T(0.2);
  }
  return p;
}

}  // namespace

TEST_CASE("encode: latent shapes, determinism, batch independence") {
  SurfVaeT<double> sv({4, 6, 8, 8}, 3);
  const TensorD x = plane_grid<double>();
  auto [m1, lv1] = sv.encode_eval(x);
  REQUIRE(m1.shape == std::vector<int>({4, 4, 3}));
  REQUIRE(lv1.shape == std::vector<int>({4, 4, 3}));
  auto [m2, lv2] = sv.encode_eval(x);
  for (int64_t i = 0; i < m1.numel(); ++i) {
    CHECK(m1[i] == m2[i]);
    CHECK(lv1[i] == lv2[i]);
  }

  EdgeVaeT<double> ev({4, 6, 8}, 3);
  auto [em, elv] = ev.encode_eval(line_points<double>());
  REQUIRE(em.shape == std::vector<int>({4, 3}));
  REQUIRE(elv.shape == std::vector<int>({4, 3}));

  // batch independence: swapping two distinct inputs swaps the outputs
  TensorD other = plane_grid<double>();
  for (auto& v : other.data) v *= 0.5;
  TensorD ab({2, 32, 32, 3}), ba({2, 32, 32, 3});
  std::copy(x.data.begin(), x.data.end(), ab.data.begin());
  std::copy(other.data.begin(), other.data.end(), ab.data.begin() + x.numel());
  std::copy(other.data.begin(), other.data.end(), ba.data.begin());
  std::copy(x.data.begin(), x.data.end(), ba.data.begin() + x.numel());
  auto [mab, lvab] = sv.encode_eval(ab);
  auto [mba, lvba] = sv.encode_eval(ba);
  const int64_t half = mab.numel() / 2;
  for (int64_t i = 0; i < half; ++i) {
    CHECK(mab[i] == mba[half + i]);
    CHECK(mab[half + i] == mba[i]);
  }
}

TEST_CASE("encode: non-finite activations are rejected") {
  SurfVaeT<double> sv({4, 6, 8, 8}, 3);
  TensorD x = plane_grid<double>();
  x[0] = std::nan("");
  CHECK_THROWS_AS(sv.encode_eval(x), std::runtime_error);
}

TEST_CASE("decode: output shape and strict (-1,1) range") {
  SurfVaeT<double> sv({4, 6, 8, 8}, 5);
  Rng rng(7);
  const TensorD z = TensorD::randn({4, 4, 3}, rng);
  const TensorD out = sv.decode_eval(z);
  REQUIRE(out.shape == std::vector<int>({32, 32, 3}));
  for (double v : out.data) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  const TensorD again = sv.decode_eval(z);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == again[i]);

  EdgeVaeT<double> ev({4, 6, 8}, 5);
  const TensorD ez = TensorD::randn({4, 3}, rng);
  const TensorD eout = ev.decode_eval(ez);
  REQUIRE(eout.shape == std::vector<int>({32, 3}));
  for (double v : eout.data) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("reparameterize: clamped logvar, reproducibility, sample variance") {
  TensorD mean({64});
  TensorD logvar({64});
  for (int i = 0; i < 64; ++i) {
    mean[i] = 0.7;
    logvar[i] = -40.0;  // clamps to -30: stddev ~ 3e-7
  }
  Rng a(11);
  const TensorD z = reparameterize(mean, logvar, a);
  for (int i = 0; i < 64; ++i) CHECK(z[i] == doctest::Approx(0.7).epsilon(1e-5));

  Rng b1(13), b2(13);
  const TensorD z1 = reparameterize(mean, logvar, b1);
  const TensorD z2 = reparameterize(mean, logvar, b2);
  for (int i = 0; i < 64; ++i) CHECK(z1[i] == z2[i]);

  // Monte Carlo: var(z) should match exp(logvar) within 5% over 1e4 draws
  const int n = 10000;
  TensorD m({n}), lv({n});
  const double want_var = 0.25;
  for (int i = 0; i < n; ++i) {
    m[i] = 0.3;
    lv[i] = std::log(want_var);
  }
  Rng c(17);
  const TensorD zs = reparameterize(m, lv, c);
  double mu = 0;
  for (int i = 0; i < n; ++i) mu += zs[i];
  mu /= n;
  double var = 0;
  for (int i = 0; i < n; ++i) var += (zs[i] - mu) * (zs[i] - mu);
  var /= n - 1;
  CHECK(std::fabs(var - want_var) / want_var < 0.05);
}

TEST_CASE("vae_loss: closed-form KL values") {
  // standard-normal posterior: KL term vanishes
  TensorD x({4}), xhat({4}), m0({6}), lv0({6});
  for (int i = 0; i < 4; ++i) x[i] = xhat[i] = 0.3 * i;
  CHECK(vae_loss(x, xhat, m0, lv0, 1.0) == 0.0);

  // single latent entry with mean 1, logvar 0: KL = 0.5
  TensorD m1({1}), lv1({1});
  m1[0] = 1.0;
  CHECK(vae_loss(x, xhat, m1, lv1, 1.0) == doctest::Approx(0.5).epsilon(1e-12));

  // KL is nonnegative and only vanishes at the standard normal
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorD m = TensorD::randn({5}, rng);
    const TensorD lv = TensorD::randn({5}, rng);
    const double kl = vae_loss(x, xhat, m, lv, 1.0);
    CHECK(kl > 0.0);
  }
}

TEST_CASE("vae_loss gradients: full reparameterized path at toy widths") {
  SurfVaeT<double> sv({3, 4, 5, 5}, 29);
  const TensorD x = plane_grid<double>();
  Rng rng(31);
  TensorD eps;
  {
    // latent noise fixed across gradcheck evaluations
    Rng r(33);
    eps = TensorD::randn({1, 4, 4, 3}, r);
  }
  TensorD xb({1, 32, 32, 3}, x.data);

  auto build = [&](Ctx<double>& c) {
    Tape<double>& t = c.tape;
    const VarId xv = t.constant(xb);
    auto [mean, logvar] = sv.encode(c, xv);
    const VarId z =
        t.add(mean, t.mul(t.exp_op(t.scale(logvar, 0.5)), t.constant(eps)));
    const VarId xhat = sv.decode(c, z);
    const VarId mse = t.mse(xhat, xv);
    VarId kl = t.sub(t.add(t.exp_op(logvar), t.mul(mean, mean)), logvar);
    kl = t.scale(t.mean_all(t.add_scalar(kl, -1.0)), 0.5);
    return t.add(mse, t.scale(kl, 0.5));
  };

  auto loss_fn = [&]() {
    Tape<double> tape;
    Ctx<double> ctx{tape, sv.params()};
    return tape.val(build(ctx))[0];
  };
  auto grad_fn = [&]() {
    Tape<double> tape;
    Ctx<double> ctx{tape, sv.params()};
    VarId l = build(ctx);
    tape.backward(l);
    std::vector<TensorD> gs;
    for (std::size_t i = 0; i < sv.params().size(); ++i)
      gs.push_back(ctx.grad_of(sv.params().name_at(i)));
    return gs;
  };
  // h = 1e-5: at 1e-4 the central-difference truncation term (~h^2) dominates
  // the comparison for the smallest gradients in this deep composition
  const auto res = grad_check(sv.params(), loss_fn, grad_fn, 1e-5, 3);
  CHECK_MESSAGE(res.max_rel_err < 1e-3, "worst: ", res.worst_param);
}

TEST_CASE("train_vae: memorizes a single flat plane grid") {
  SurfVaeT<float> sv({8, 12, 16, 16}, 41);
  std::vector<TensorF> data{plane_grid<float>()};
  VaeTrainOptions opt;
  opt.epochs = 500;  // batch of one sample: one step per epoch
  opt.batch = 1;
  opt.lr = 1e-2;
  opt.seed = 43;
  const auto res = train_vae(sv, data, opt);
  REQUIRE(res.recon_mse.size() == 500);
  CHECK(res.recon_mse.back() < 1e-4);
}

TEST_CASE("train_vae: memorizes a single edge polyline") {
  EdgeVaeT<float> ev({8, 12, 16}, 47);
  std::vector<TensorF> data{line_points<float>()};
  VaeTrainOptions opt;
  opt.epochs = 500;
  opt.batch = 1;
  opt.lr = 2e-3;
  opt.seed = 51;
  const auto res = train_vae(ev, data, opt);
  CHECK(res.recon_mse.back() < 1e-3);
}

TEST_CASE("train_vae: lr=0 freezes the loss curve") {
  EdgeVaeT<float> ev({4, 6, 8}, 53);
  std::vector<TensorF> data{line_points<float>()};
  for (auto& v : data[0].data) v *= 0.9f;
  VaeTrainOptions opt;
  opt.epochs = 4;
  opt.batch = 1;
  opt.lr = 0.0;
  opt.seed = 57;
  const auto res = train_vae(ev, data, opt);
  for (int e = 1; e < 4; ++e) {
    CHECK(res.loss[e] == res.loss[0]);
    CHECK(res.recon_mse[e] == res.recon_mse[0]);
  }
}

TEST_CASE("train_vae: fixed seed reproduces the loss curve") {
  auto run = [] {
    EdgeVaeT<float> ev({4, 6, 8}, 61);
    std::vector<TensorF> data{line_points<float>()};
    VaeTrainOptions opt;
    opt.epochs = 5;
    opt.batch = 1;
    opt.lr = 1e-3;
    opt.seed = 63;
    return train_vae(ev, data, opt);
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.loss.size() == b.loss.size());
  for (size_t i = 0; i < a.loss.size(); ++i) CHECK(a.loss[i] == b.loss[i]);
}

TEST_CASE("train_vae: rejects an empty dataset") {
  SurfVaeT<float> sv({4, 6, 8, 8}, 67);
  std::vector<TensorF> data;
  CHECK_THROWS_AS(train_vae(sv, data, VaeTrainOptions{}), std::runtime_error);
}
