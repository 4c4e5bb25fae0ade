#include "gbrep/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace gbrep {

DiffusionSchedule make_schedule(int T) {
  if (T < 2) throw std::runtime_error("make_schedule: T must be at least 2");
  DiffusionSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.post_var.assign(T + 1, 0.0);
  const double b0 = 1e-4, b1 = 2e-2;
  for (int t = 1; t <= T; ++t) {
    // interpolation hits both endpoints exactly: (t-1)/(T-1) is 0 at t=1, 1 at t=T
    s.beta[t] = b0 + (b1 - b0) * (double(t - 1) / double(T - 1));
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.post_var[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

static void check_t(int t, int lo, int hi, const char* who) {
  if (t < lo || t > hi) throw std::runtime_error(std::string(who) + ": t out of range");
}

TensorD forward_sample(const TensorD& x0, int t, const TensorD& eps,
                       const DiffusionSchedule& s) {
  check_t(t, 0, s.T, "forward_sample");
  if (t == 0) return x0;
  if (!x0.same_shape(eps)) throw std::runtime_error("forward_sample: shape mismatch");
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  TensorD out(x0.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

PosteriorMoments posterior_mean_var(const TensorD& x_t, const TensorD& x0, int t,
                                    const DiffusionSchedule& s) {
  check_t(t, 1, s.T, "posterior_mean_var");
  if (!x_t.same_shape(x0)) throw std::runtime_error("posterior_mean_var: shape mismatch");
  if (t == 1) return {x0, 0.0};  // point mass: abar_0 = 1 kills the x_t term
  const double abar = s.alpha_bar[t], abar_p = s.alpha_bar[t - 1];
  const double c_xt = std::sqrt(s.alpha[t]) * (1.0 - abar_p) / (1.0 - abar);
  const double c_x0 = std::sqrt(abar_p) * s.beta[t] / (1.0 - abar);
  PosteriorMoments out;
  out.mean = TensorD(x_t.shape);
  for (int64_t i = 0; i < out.mean.numel(); ++i) out.mean[i] = c_xt * x_t[i] + c_x0 * x0[i];
  out.var = s.post_var[t];
  return out;
}

TensorD ddpm_step(const TensorD& x_t, const TensorD& eps_hat, int t, const TensorD& z,
                  const DiffusionSchedule& s) {
  check_t(t, 1, s.T, "ddpm_step");
  if (!x_t.same_shape(eps_hat)) throw std::runtime_error("ddpm_step: shape mismatch");
  const double inv_sa = 1.0 / std::sqrt(s.alpha[t]);
  const double c_eps = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
  const double sigma = t > 1 ? std::sqrt(s.beta[t]) : 0.0;
  if (sigma > 0 && !x_t.same_shape(z)) throw std::runtime_error("ddpm_step: shape mismatch");
  TensorD out(x_t.shape);
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = inv_sa * (x_t[i] - c_eps * eps_hat[i]);
    if (sigma > 0) out[i] += sigma * z[i];
  }
  return out;
}

TensorD symmetric_noise(int n, Rng& rng) {
  if (n < 1) throw std::runtime_error("symmetric_noise: n must be positive");
  TensorD out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double g = rng.normal();
      out.at(i, j) = g;
      out.at(j, i) = g;
    }
  return out;
}

std::vector<int> pndm_stride_schedule(int t_start, int t_end, int steps) {
  if (steps < 1) throw std::runtime_error("pndm_stride_schedule: steps must be positive");
  if (t_start <= t_end) throw std::runtime_error("pndm_stride_schedule: empty range");
  std::vector<int> ts;
  ts.reserve(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    const double f = double(k) / double(steps);
    const int t = int(std::lround(t_start + (t_end - t_start) * f));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  return ts;  // strictly decreasing, includes both endpoints
}

// Transfer x from time t to t_prev given an eps estimate; the rationalized
// form keeps a single division so zero-eps trajectories stay exact products.
static TensorD pndm_transfer(const TensorD& x, const TensorD& e, int t, int t_prev,
                             const DiffusionSchedule& s) {
  const double abar = s.alpha_bar[t], abar_p = s.alpha_bar[t_prev];
  const double c_x = std::sqrt(abar_p / abar);
  const double denom =
      abar * std::sqrt(1.0 - abar_p) + std::sqrt(abar * (1.0 - abar) * abar_p);
  const double c_e = (abar_p - abar) / denom;
  TensorD out(x.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = c_x * x[i] - c_e * e[i];
  return out;
}

TensorD pndm_sample(const DenoiseFn& f, const TensorD& x_start, int steps,
                    const DiffusionSchedule& s, int t_start, int t_end, int max_order) {
  if (t_start < 0) t_start = s.T;
  check_t(t_start, 1, s.T, "pndm_sample");
  check_t(t_end, 0, t_start - 1, "pndm_sample");
  if (max_order < 1 || max_order > 4)
    throw std::runtime_error("pndm_sample: max_order must be in [1,4]");
  if (steps < 4) max_order = 1;  // not enough history to warm up the multistep
  const std::vector<int> ts = pndm_stride_schedule(t_start, t_end, steps);

  TensorD x = x_start;
  std::vector<TensorD> ets;  // eps history, oldest first
  for (size_t k = 0; k + 1 < ts.size(); ++k) {
    const int t = ts[k], t_prev = ts[k + 1];
    TensorD e_t = f(x, t);
    if (!x.same_shape(e_t)) throw std::runtime_error("pndm_sample: denoiser shape mismatch");
    ets.push_back(std::move(e_t));
    if (int(ets.size()) > max_order) ets.erase(ets.begin());

    TensorD e(x.shape);
    const size_t m = ets.size();
    const int order = std::min<int>(int(m), max_order);
    for (int64_t i = 0; i < e.numel(); ++i) {
      double v;
      if (order == 1) {
        v = ets[m - 1][i];
      } else if (order == 2) {
        v = (3.0 * ets[m - 1][i] - ets[m - 2][i]) / 2.0;
      } else if (order == 3) {
        v = (23.0 * ets[m - 1][i] - 16.0 * ets[m - 2][i] + 5.0 * ets[m - 3][i]) / 12.0;
      } else {
        v = (55.0 * ets[m - 1][i] - 59.0 * ets[m - 2][i] + 37.0 * ets[m - 3][i] -
             9.0 * ets[m - 4][i]) /
            24.0;
      }
      e[i] = v;
    }
    x = pndm_transfer(x, e, t, t_prev, s);
  }
  return x;
}

TensorD ddpm_sample(const DenoiseFn& f, const TensorD& x_start, int t_start,
                    const DiffusionSchedule& s, Rng& rng) {
  check_t(t_start, 1, s.T, "ddpm_sample");
  TensorD x = x_start;
  TensorD z(x.shape);
  for (int t = t_start; t >= 1; --t) {
    const TensorD e = f(x, t);
    if (t > 1)
      for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
    x = ddpm_step(x, e, t, z, s);
  }
  return x;
}

TensorD hybrid_sample(const DenoiseFn& f, const TensorD& x_T, const DiffusionSchedule& s,
                      Rng& rng, int pndm_steps, int switch_t) {
  if (switch_t < 1 || switch_t >= s.T)
    throw std::runtime_error("hybrid_sample: schedule too short for split point");
  TensorD x = pndm_sample(f, x_T, pndm_steps, s, s.T, switch_t);
  return ddpm_sample(f, x, switch_t, s, rng);
}

}  // namespace gbrep
