#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "egosc/tensor.hpp"

namespace egosc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are lazily shaped on the first
// update and must match parameter shapes afterwards.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  void update(std::vector<Tensor<T>*> params, const std::vector<Tensor<T>>& grads) {
    if (params.size() != grads.size()) throw ContractError("adam: param/grad count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
      }
    }
    if (m_.size() != params.size()) throw ContractError("adam: state size mismatch");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      const Tensor<T>& g = grads[k];
      p.require_same_shape(g, "adam");
      p.require_same_shape(m_[k], "adam state");
      T* __restrict__ pd = p.data();
      const T* __restrict__ gd = g.data();
      T* __restrict__ md = m_[k].data();
      T* __restrict__ vd = v_[k].data();
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        md[i] = static_cast<T>(cfg_.beta1 * md[i] + (1.0 - cfg_.beta1) * gd[i]);
        vd[i] = static_cast<T>(cfg_.beta2 * vd[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i]);
        const double mhat = md[i] / bc1;
        const double vhat = vd[i] / bc2;
        pd[i] = static_cast<T>(pd[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace egosc
