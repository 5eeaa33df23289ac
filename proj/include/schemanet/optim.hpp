#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "schemanet/tensor.hpp"

namespace schemanet {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are created lazily on the first step and
/// must keep matching the parameter list they were created for.
template <typename T>
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  /// Applies one update using each parameter's accumulated `grad`.
  void step(std::span<Parameter<T>* const> params);

  /// Updates `params` from explicit gradients (same order and shapes).
  void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads);

  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

/// Plain stochastic gradient descent (the fine-tuning optimizer option).
template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr);

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->zero_grad();
}

/// Uniform in +-sqrt(6 / (rows + cols)).
template <typename T>
Tensor<T> glorot_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

}  // namespace schemanet
