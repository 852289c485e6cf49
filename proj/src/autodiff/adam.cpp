#include "vm3ac/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace vm3ac::ad {

AdamState AdamState::for_params(const ParamList& params, const AdamConfig& config) {
  AdamState state;
  state.learning_rate = config.learning_rate;
  state.beta1 = config.beta1;
  state.beta2 = config.beta2;
  state.epsilon = config.epsilon;
  for (const auto& p : params) {
    state.first_moment.push_back(Tensor::zeros(p.tensor->shape()));
    state.second_moment.push_back(Tensor::zeros(p.tensor->shape()));
  }
  return state;
}

void adam_step(const ParamList& params, const std::vector<Tensor>& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters, " +
                                std::to_string(grads.size()) + " gradients, " +
                                std::to_string(state.first_moment.size()) + " moment slots");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& shape = params[k].tensor->shape();
    if (grads[k].shape() != shape || state.first_moment[k].shape() != shape ||
        state.second_moment[k].shape() != shape) {
      throw ShapeError("adam_step: shape mismatch for parameter '" + params[k].name + "' " + shape_string(shape) +
                       " vs gradient " + shape_string(grads[k].shape()));
    }
    if (!grads[k].all_finite()) {
      throw std::domain_error("adam_step: non-finite gradient for parameter '" + params[k].name + "'");
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].tensor->data();
    auto m = state.first_moment[k].data();
    auto v = state.second_moment[k].data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void adam_step(const ParamList& params, const Gradients& grads, AdamState& state) {
  std::vector<Tensor> flat;
  flat.reserve(params.size());
  for (const auto& p : params) flat.push_back(grads.of(*p.tensor));
  adam_step(params, flat, state);
}

}  // namespace vm3ac::ad
