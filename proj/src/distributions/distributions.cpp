#include "vm3ac/distributions/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace vm3ac::dist {

namespace {

void require_same_shape(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ad::ShapeError(std::string(what) + ": dimension mismatch " + ad::shape_string(a.shape()) + " vs " +
                         ad::shape_string(b.shape()));
  }
}

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

}  // namespace

Tensor standard_normal(const ad::Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

DiagGaussian DiagGaussian::from_raw(const Tensor& mean, const Tensor& raw_log_std) {
  require_same_shape("diag_gaussian", mean, raw_log_std);
  return {mean, ad::clamp(raw_log_std, kLogStdMin, kLogStdMax)};
}

Tensor DiagGaussian::std() const { return ad::exp(log_std); }

Tensor DiagGaussian::sample(const Tensor& noise) const {
  require_same_shape("sample_reparam", mean, noise);
  return ad::add(mean, ad::mul(std(), noise));
}

Tensor DiagGaussian::log_prob(const Tensor& x) const {
  require_same_shape("log_prob", mean, x);
  const Tensor standardized = ad::mul(ad::sub(x, mean), ad::exp(ad::scale(log_std, -1.0)));
  const Tensor per_dim = ad::add_scalar(ad::sub(ad::scale(ad::square(standardized), -0.5), log_std), -0.5 * kLog2Pi);
  return ad::sum_cols(per_dim);
}

SquashedGaussian::Sample SquashedGaussian::sample(const Tensor& noise) const {
  Tensor u = base.sample(noise);
  Tensor a = ad::tanh(u);
  return {std::move(u), std::move(a)};
}

Tensor SquashedGaussian::mode() const { return ad::tanh(base.mean); }

Tensor SquashedGaussian::log_prob_pre_squash(const Tensor& pre_squash) const {
  const Tensor a = ad::tanh(pre_squash);
  const Tensor correction = ad::log(ad::add_scalar(ad::scale(ad::square(a), -1.0), 1.0 + kTanhEpsilon));
  return ad::sub(base.log_prob(pre_squash), ad::sum_cols(correction));
}

Tensor SquashedGaussian::log_prob(const Tensor& action) const {
  require_same_shape("log_prob", base.mean, action);
  Tensor u = action.detach();
  for (auto& v : u.data()) {
    if (!(std::abs(v) < 1.0)) {
      throw std::domain_error("squashed log_prob: action component " + std::to_string(v) +
                              " is outside the open interval (-1, 1)");
    }
    v = std::atanh(v);
  }
  Tensor correction = action.detach();
  for (auto& v : correction.data()) v = std::log(1.0 - v * v + kTanhEpsilon);
  return ad::sub(base.log_prob(u), ad::sum_cols(correction));
}

Tensor gaussian_log_density(const Tensor& target, const Tensor& mean, double sigma) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("variational sigma must be positive, got " + std::to_string(sigma));
  }
  require_same_shape("variational_log_q", target, mean);
  const double d = static_cast<double>(mean.cols());
  const double norm = -0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma);
  const Tensor sq = ad::sum_cols(ad::square(ad::sub(target, mean)));
  return ad::add_scalar(ad::scale(sq, -1.0 / (2.0 * sigma * sigma)), norm);
}

Tensor variational_log_q(const VariationalGaussian& q, const Tensor& a_i, const Tensor& a_j, const Tensor& o_i,
                         const Tensor& o_j, std::size_t j, ad::Tape* tape) {
  if (!(q.sigma > 0.0)) {
    throw std::invalid_argument("variational sigma must be positive, got " + std::to_string(q.sigma));
  }
  const Tensor mu = q.mean_fn(a_i, o_i, o_j, j, tape);
  return gaussian_log_density(a_j, mu, q.sigma);
}

Tensor PairedLogQ::total() const { return ad::add(factor_a.detach(), factor_b); }

PairedLogQ paired_log_q(const VariationalGaussian& q, const Tensor& a_i, const Tensor& a_j, const Tensor& o_i,
                        const Tensor& o_j, std::size_t i, std::size_t j, ad::Tape* tape) {
  PairedLogQ out;
  out.factor_a = variational_log_q(q, a_j.detach(), a_i.detach(), o_i.detach(), o_j.detach(), i, nullptr);
  out.factor_b = variational_log_q(q, a_i, a_j, o_i, o_j, j, tape);
  return out;
}

Tensor LatentPrior::sample(std::size_t batch, std::mt19937_64& rng) const {
  return standard_normal({batch, dim}, rng);
}

}  // namespace vm3ac::dist
