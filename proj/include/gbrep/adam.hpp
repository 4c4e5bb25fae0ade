#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gbrep/nn.hpp"
#include "gbrep/tensor.hpp"

namespace gbrep {

// Adam with bias correction. State vectors are keyed by parameter index in
// the store, so the store layout must not change between steps.
template <class T>
class Adam {
 public:
  explicit Adam(ParamStore<T>& params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                T eps = T(1e-8))
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.at(i).shape);
      v_.emplace_back(params.at(i).shape);
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  std::int64_t step_count() const { return t_; }

  // grads[i] must match params.at(i) in shape (empty tensors mean zero grad).
  void step(const std::vector<TensorT<T>>& grads) {
    if (grads.size() != params_.size()) throw std::logic_error("Adam: grad count mismatch");
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      TensorT<T>& p = params_.at(i);
      TensorT<T>& m = m_[i];
      TensorT<T>& v = v_[i];
      const bool zero = grads[i].numel() == 0;
      if (!zero && !grads[i].same_shape(p))
        throw std::logic_error("Adam: grad shape mismatch at " + params_.name_at(i));
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        const T g = zero ? T(0) : grads[i][j];
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  // Convenience: pull per-parameter grads out of a forward context.
  void step_from(const Ctx<T>& ctx) {
    std::vector<TensorT<T>> grads;
    grads.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      grads.push_back(ctx.grad_of(params_.name_at(i)));
    step(grads);
  }

 private:
  ParamStore<T>& params_;
  T lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<TensorT<T>> m_, v_;
};

}  // namespace gbrep
