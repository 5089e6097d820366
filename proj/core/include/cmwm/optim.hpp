#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cmwm/param.hpp"

namespace cmwm {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with per-parameter first/second moment state, keyed by name.
/// Frozen parameters are skipped entirely (no state advance, no update).
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.lr <= 0) throw std::invalid_argument("adam: lr must be > 0");
  }

  void step(const std::vector<Parameter<T>*>& params) {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T corr1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, t_));
    const T corr2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, t_));
    const T lr = static_cast<T>(cfg_.lr);
    const T eps = static_cast<T>(cfg_.eps);
    for (Parameter<T>* p : params) {
      if (!p->trainable) continue;
      State& s = state_[p->name];
      if (s.m.empty()) {
        s.m = Tensor<T>::zeros(p->value.shape());
        s.v = Tensor<T>::zeros(p->value.shape());
      }
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        const T g = p->grad[i];
        s.m[i] = b1 * s.m[i] + (T(1) - b1) * g;
        s.v[i] = b2 * s.v[i] + (T(1) - b2) * g * g;
        const T mhat = s.m[i] / corr1;
        const T vhat = s.v[i] / corr2;
        p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  struct State {
    Tensor<T> m, v;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, State> state_;
};

}  // namespace cmwm
