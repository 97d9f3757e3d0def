#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "fogseg/params.hpp"

// Optimizers update ParamSets in place from a name->gradient map. Entries
// absent from the gradient map (frozen leaves, normalization statistics) are
// left alone. Learning rates come from the caller each step so schedules
// live with the trainers.

namespace fogseg {

inline float lr_linear(int64_t step, int64_t total, float lr0, float lr1) {
  if (total <= 0) throw ConfigError("lr_linear: total steps must be positive");
  if (step < 0 || step > total) throw DomainError("lr_linear: step out of range");
  return lr0 + (lr1 - lr0) * float(double(step) / double(total));
}

class Adam {
 public:
  Adam(float beta1 = 0.9f, float beta2 = 0.99f, float eps = 1e-8f)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& ps, const std::map<std::string, Tensorf>& grads, float lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(beta1_), double(t_));
    const double bc2 = 1.0 - std::pow(double(beta2_), double(t_));
    for (const auto& [name, g] : grads) {
      Tensorf& p = ps.at(name);
      check_same_shape(p, g, "Adam::step");
      auto mit = m_.find(name);
      if (mit == m_.end()) {
        mit = m_.emplace(name, Tensorf(p.dims(), 0.0f)).first;
        v_.emplace(name, Tensorf(p.dims(), 0.0f));
      }
      float* m = mit->second.mutable_data();
      float* v = v_.at(name).mutable_data();
      float* w = p.mutable_data();
      const float* gd = g.data();
      for (int64_t i = 0; i < p.numel(); ++i) {
        m[i] = beta1_ * m[i] + (1.0f - beta1_) * gd[i];
        v[i] = beta2_ * v[i] + (1.0f - beta2_) * gd[i] * gd[i];
        const float mhat = float(m[i] / bc1);
        const float vhat = float(v[i] / bc2);
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  float beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Tensorf> m_, v_;
};

class SgdMomentum {
 public:
  explicit SgdMomentum(float momentum = 0.9f) : momentum_(momentum) {}

  // lr_of maps a parameter name to its group's learning rate this step.
  void step(ParamSet& ps, const std::map<std::string, Tensorf>& grads,
            const std::function<float(const std::string&)>& lr_of) {
    for (const auto& [name, g] : grads) {
      Tensorf& p = ps.at(name);
      check_same_shape(p, g, "SgdMomentum::step");
      auto vit = vel_.find(name);
      if (vit == vel_.end()) vit = vel_.emplace(name, Tensorf(p.dims(), 0.0f)).first;
      float* v = vit->second.mutable_data();
      float* w = p.mutable_data();
      const float* gd = g.data();
      const float lr = lr_of(name);
      for (int64_t i = 0; i < p.numel(); ++i) {
        v[i] = momentum_ * v[i] + gd[i];
        w[i] -= lr * v[i];
      }
    }
  }

 private:
  float momentum_;
  std::map<std::string, Tensorf> vel_;
};

}  // namespace fogseg
