#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "vm3ac/autodiff/adam.hpp"
#include "vm3ac/autodiff/tape.hpp"

namespace vm3ac::ad {

/// Fully connected network: ReLU hidden layers, linear output layer.
/// Weights are stored [in, out] so a batch [B, in] maps to [B, out].
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim, std::mt19937_64& rng);

  /// With a tape the parameters are watched and the pass is recorded;
  /// without one the result is a plain value (inputs may still be tracked,
  /// in which case weights enter the tape as constants).
  Tensor forward(const Tensor& x, Tape* tape = nullptr) const;

  void collect(const std::string& prefix, ParamList& out);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  std::size_t layer_count() const { return weights_.size(); }

  std::vector<Tensor>& weights() { return weights_; }
  std::vector<Tensor>& biases() { return biases_; }
  const std::vector<Tensor>& weights() const { return weights_; }
  const std::vector<Tensor>& biases() const { return biases_; }

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

}  // namespace vm3ac::ad
