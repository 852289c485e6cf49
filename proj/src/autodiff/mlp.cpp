#include "vm3ac/autodiff/mlp.hpp"

#include <cmath>

namespace vm3ac::ad {

Mlp::Mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim, std::mt19937_64& rng)
    : in_dim_(in_dim), out_dim_(out_dim) {
  std::vector<std::size_t> sizes{in_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out_dim);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fan_in = sizes[l];
    const auto fan_out = sizes[l + 1];
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear-layer default.
    const double bound = fan_in ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
    std::uniform_real_distribution<double> init(-bound, bound);
    Tensor w = Tensor::zeros({fan_in, fan_out});
    Tensor b = Tensor::zeros({fan_out});
    for (auto& v : w.data()) v = init(rng);
    for (auto& v : b.data()) v = init(rng);
    weights_.push_back(std::move(w));
    biases_.push_back(std::move(b));
  }
}

Tensor Mlp::forward(const Tensor& x, Tape* tape) const {
  Tensor h = x;
  Tensor watched_w, watched_b;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Tensor& w = tape ? (watched_w = tape->watch(weights_[l])) : weights_[l];
    const Tensor& b = tape ? (watched_b = tape->watch(biases_[l])) : biases_[l];
    h = add_row(matmul(h, w), b);
    if (l + 1 < weights_.size()) h = relu(h);
  }
  return h;
}

void Mlp::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({prefix + "/l" + std::to_string(l) + "/w", &weights_[l]});
    out.push_back({prefix + "/l" + std::to_string(l) + "/b", &biases_[l]});
  }
}

}  // namespace vm3ac::ad
