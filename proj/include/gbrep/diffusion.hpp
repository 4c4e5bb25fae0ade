#pragma once

#include <functional>
#include <vector>

#include "gbrep/rng.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

// Linear-beta schedule tables, 1-indexed by timestep; index 0 holds the
// conventions beta_0 = 0, alpha_bar_0 = 1 so t=0 means "clean sample".
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t], t in [1,T], linear 1e-4 .. 2e-2
  std::vector<double> alpha;      // 1 - beta[t]
  std::vector<double> alpha_bar;  // prod_{i<=t} alpha[i]
  std::vector<double> post_var;   // (1-abar_{t-1})/(1-abar_t) * beta_t
};

DiffusionSchedule make_schedule(int T);

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps; t=0 returns x0 unchanged.
TensorD forward_sample(const TensorD& x0, int t, const TensorD& eps,
                       const DiffusionSchedule& s);

// Posterior q(x_{t-1} | x_t, x0): mean and variance. t=1 collapses to
// (x0, 0) exactly.
struct PosteriorMoments {
  TensorD mean;
  double var = 0;
};
PosteriorMoments posterior_mean_var(const TensorD& x_t, const TensorD& x0, int t,
                                    const DiffusionSchedule& s);

// Ancestral update x_{t-1} = (x_t - beta_t/sqrt(1-abar_t) eps_hat)/sqrt(alpha_t)
// + sigma_t z with sigma_t^2 = beta_t; the noise term is dropped at t=1.
TensorD ddpm_step(const TensorD& x_t, const TensorD& eps_hat, int t, const TensorD& z,
                  const DiffusionSchedule& s);

// Upper triangle iid N(0,1) mirrored below, zero diagonal.
TensorD symmetric_noise(int n, Rng& rng);

using DenoiseFn = std::function<TensorD(const TensorD& x, int t)>;

// Uniformly strided timesteps from t_start down to t_end (both included).
std::vector<int> pndm_stride_schedule(int t_start, int t_end, int steps);

// Pseudo linear multistep sampling over the strided schedule: first three
// strides warm up at orders 1..3, then 4th-order extrapolation of eps.
// steps < 4 (or max_order 1) degrades to plain first-order transfers.
TensorD pndm_sample(const DenoiseFn& f, const TensorD& x_start, int steps,
                    const DiffusionSchedule& s, int t_start = -1, int t_end = 0,
                    int max_order = 4);

// Ancestral DDPM from t_start down to 0, drawing z from rng each step.
TensorD ddpm_sample(const DenoiseFn& f, const TensorD& x_start, int t_start,
                    const DiffusionSchedule& s, Rng& rng);

// PNDM strides from T down to switch_t, then ancestral DDPM to 0.
TensorD hybrid_sample(const DenoiseFn& f, const TensorD& x_T, const DiffusionSchedule& s,
                      Rng& rng, int pndm_steps = 200, int switch_t = 250);

}  // namespace gbrep
