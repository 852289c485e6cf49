#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vm3ac/autodiff/tape.hpp"
#include "vm3ac/autodiff/tensor.hpp"

namespace vm3ac::ad {

/// A named, mutable parameter owned by some module.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

using ParamList = std::vector<ParamRef>;

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for one group of parameters, in the group's order.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step_count = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const ParamList& params, const AdamConfig& config = {});
};

/// Bias-corrected Adam update. Throws std::domain_error naming the first
/// parameter whose gradient is not finite; nothing is modified in that case.
void adam_step(const ParamList& params, const std::vector<Tensor>& grads, AdamState& state);
void adam_step(const ParamList& params, const Gradients& grads, AdamState& state);

}  // namespace vm3ac::ad
