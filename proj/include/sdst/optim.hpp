#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "sdst/tensor.hpp"

namespace sdst::ag {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moment buffers are keyed by parameter node, so a
// parameter set must stay alive for the optimizer's lifetime.
template <class S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t steps() const { return t_; }

  void step(const std::vector<Tensor<S>*>& params, double lr_override = -1.0) {
    ++t_;
    double lr = lr_override >= 0 ? lr_override : cfg_.lr;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Tensor<S>* p : params) {
      auto& slot = slots_[p->node().get()];
      if (slot.m.size() != p->size()) {
        slot.m.assign(p->size(), S(0));
        slot.v.assign(p->size(), S(0));
      }
      auto& grad = p->grad();
      if (grad.size() != p->size()) throw ShapeMismatch("adam: grad/param size mismatch");
      auto& val = p->values();
      for (size_t i = 0; i < val.size(); ++i) {
        double g = static_cast<double>(grad[i]);
        double m = cfg_.beta1 * static_cast<double>(slot.m[i]) + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * static_cast<double>(slot.v[i]) + (1.0 - cfg_.beta2) * g * g;
        slot.m[i] = static_cast<S>(m);
        slot.v[i] = static_cast<S>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        val[i] = static_cast<S>(static_cast<double>(val[i]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  static void zero_grad(const std::vector<Tensor<S>*>& params) {
    for (Tensor<S>* p : params) p->grad().assign(p->size(), S(0));
  }

 private:
  struct Slot {
    std::vector<S> m, v;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<Node<S>*, Slot> slots_;
};

}  // namespace sdst::ag
