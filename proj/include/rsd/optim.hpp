#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "rsd/tensor.hpp"

namespace rsd {

/// Adam with bias correction. Defaults follow the training recipe used
/// throughout this project: lr 1e-4, betas (0, 0.9).
struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.0f;
  float beta2 = 0.9f;
  float eps = 1e-8f;
};

/// Holds per-parameter first/second moment buffers and the step counter.
/// A parameter with no accumulated gradient is treated as zero gradient
/// (which leaves it unchanged).
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.push_back(Array<float>::Zero(p.numel()));
      v_.push_back(Array<float>::Zero(p.numel()));
    }
  }

  void step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      Array<float> g = p.grad();
      if (!g.allFinite()) throw NumericsError("adam: non-finite gradient");
      m_[i] = cfg_.beta1 * m_[i] + (1.0f - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0f - cfg_.beta2) * g.square();
      p.data() -= cfg_.lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + cfg_.eps);
      if (!p.data().allFinite()) throw NumericsError("adam: non-finite parameter after update");
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

  std::int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<Array<float>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace rsd
