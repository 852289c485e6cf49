#pragma once

#include <cstddef>
#include <functional>
#include <random>

#include "vm3ac/autodiff/tape.hpp"
#include "vm3ac/autodiff/tensor.hpp"

namespace vm3ac::dist {

using ad::Tensor;

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kTanhEpsilon = 1e-6;

/// i.i.d. standard-normal tensor of the given shape.
Tensor standard_normal(const ad::Shape& shape, std::mt19937_64& rng);

/// Batched diagonal Gaussian; `mean` and `log_std` are [B, d].
struct DiagGaussian {
  Tensor mean;
  Tensor log_std;

  /// Clamps `raw_log_std` into [kLogStdMin, kLogStdMax].
  static DiagGaussian from_raw(const Tensor& mean, const Tensor& raw_log_std);

  std::size_t dim() const { return mean.cols(); }
  Tensor std() const;
  /// mean + std * noise.
  Tensor sample(const Tensor& noise) const;
  /// Per-row log density, shape [B, 1].
  Tensor log_prob(const Tensor& x) const;
};

/// tanh applied to a DiagGaussian sample; support is (-1, 1)^d.
struct SquashedGaussian {
  DiagGaussian base;

  struct Sample {
    Tensor pre_squash;
    Tensor action;
  };

  Sample sample(const Tensor& noise) const;
  /// tanh(mean): the deterministic action.
  Tensor mode() const;
  /// Log density from the pre-squash value u, action = tanh(u). Keeps the
  /// gradient path through u; used on reparameterized samples.
  Tensor log_prob_pre_squash(const Tensor& pre_squash) const;
  /// Log density of an action strictly inside (-1, 1)^d. The action is
  /// treated as data; gradients flow only into mean/log_std.
  Tensor log_prob(const Tensor& action) const;
};

/// Gaussian with learned mean and fixed isotropic variance sigma^2.
/// log q(t | mu) = -||t - mu||^2 / (2 sigma^2) - (d/2) log(2 pi sigma^2).
Tensor gaussian_log_density(const Tensor& target, const Tensor& mean, double sigma);

/// q(a^target | a^given, o^i, o^j). `mean_fn` evaluates the mean network;
/// when `tape` is null it must record nothing on any tape.
struct VariationalGaussian {
  using MeanFn = std::function<Tensor(const Tensor& given_action, const Tensor& obs_i, const Tensor& obs_j,
                                      std::size_t target_agent, ad::Tape* tape)>;
  MeanFn mean_fn;
  double sigma = 0.2;
};

/// log q(a_j | a_i, o_i, o_j) for target agent j, shape [B, 1].
Tensor variational_log_q(const VariationalGaussian& q, const Tensor& a_i, const Tensor& a_j, const Tensor& o_i,
                         const Tensor& o_j, std::size_t j, ad::Tape* tape);

/// The symmetric pair log q^(i,j) = log q(a_i | a_j, .) + log q(a_j | a_i, .).
/// factor (a) predicts a_i from a_j and never carries gradient; factor (b)
/// predicts a_j from a_i and is recorded on `tape` when one is given.
struct PairedLogQ {
  Tensor factor_a;
  Tensor factor_b;
  Tensor total() const;
};

PairedLogQ paired_log_q(const VariationalGaussian& q, const Tensor& a_i, const Tensor& a_j, const Tensor& o_i,
                        const Tensor& o_j, std::size_t i, std::size_t j, ad::Tape* tape);

/// N(0, I) prior over the latent coordination variable.
struct LatentPrior {
  std::size_t dim = 0;
  /// [batch, dim]; an empty [batch, 0] tensor when dim == 0.
  Tensor sample(std::size_t batch, std::mt19937_64& rng) const;
  Tensor mean(std::size_t batch) const { return Tensor::zeros({batch, dim}); }
};

}  // namespace vm3ac::dist
