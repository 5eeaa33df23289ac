#include "schemanet/optim.hpp"

#include <cmath>
#include <string>

namespace schemanet {

template <typename T>
void AdamState<T>::step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(m_[k]))
      throw ShapeError("adam: shape mismatch for parameter " + std::to_string(k));
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.lr, eps = config_.epsilon;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k]->values();
    auto g = grads[k]->values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <typename T>
void AdamState<T>::step(std::span<Parameter<T>* const> params) {
  std::vector<Tensor<T>*> values;
  std::vector<const Tensor<T>*> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto* p : params) {
    if (!p->grad.same_shape(p->value)) p->zero_grad();
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  step(values, grads);
}

template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr) {
  for (auto* p : params) {
    if (!p->grad.same_shape(p->value)) continue;
    auto w = p->value.values();
    auto g = p->grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(w[i] - lr * g[i]);
  }
}

template <typename T>
Tensor<T> glorot_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> out(rows, cols);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template class AdamState<float>;
template class AdamState<double>;
template void sgd_step<float>(std::span<Parameter<float>* const>, double);
template void sgd_step<double>(std::span<Parameter<double>* const>, double);
template Tensor<float> glorot_init<float>(std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> glorot_init<double>(std::size_t, std::size_t, std::mt19937_64&);

}  // namespace schemanet
