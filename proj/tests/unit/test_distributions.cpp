#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fd.hpp"
#include "vm3ac/autodiff/mlp.hpp"
#include "vm3ac/autodiff/tape.hpp"
#include "vm3ac/distributions/distributions.hpp"

using namespace vm3ac;
using ad::Tensor;
using vm3ac::testing::max_relative_error;
using vm3ac::testing::numeric_gradient;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

dist::VariationalGaussian identity_q(double sigma) {
  dist::VariationalGaussian q;
  q.sigma = sigma;
  q.mean_fn = [](const Tensor& given, const Tensor&, const Tensor&, std::size_t, ad::Tape*) { return given; };
  return q;
}

}  // namespace

TEST_CASE("diagonal gaussian log density at the mean") {
  const auto g = dist::DiagGaussian::from_raw(Tensor::matrix({{0.3, -1.0}}), Tensor::matrix({{-0.5, 0.2}}));
  CHECK(g.log_prob(g.mean).item() == doctest::Approx(0.5 - 0.2 - kLog2Pi).epsilon(1e-14));

  const auto std_normal = dist::DiagGaussian::from_raw(Tensor::matrix({{0.0}}), Tensor::matrix({{0.0}}));
  CHECK(std_normal.log_prob(Tensor::matrix({{0.0}})).item() == doctest::Approx(-0.918939).epsilon(1e-6));
  CHECK(std_normal.log_prob(Tensor::matrix({{0.1}})).item() < std_normal.log_prob(Tensor::matrix({{0.0}})).item());
  CHECK(std_normal.log_prob(Tensor::matrix({{-0.1}})).item() < std_normal.log_prob(Tensor::matrix({{0.0}})).item());
}

TEST_CASE("log_std is clamped") {
  const auto g = dist::DiagGaussian::from_raw(Tensor::matrix({{0.0, 0.0}}), Tensor::matrix({{-50.0, 9.0}}));
  CHECK(g.log_std.values() == std::vector<double>{dist::kLogStdMin, dist::kLogStdMax});
  CHECK(g.std()[1] == doctest::Approx(std::exp(2.0)));
}

TEST_CASE("reparameterized sampling") {
  const auto g = dist::DiagGaussian::from_raw(Tensor::matrix({{0.4, -0.7}}), Tensor::matrix({{-1.0, 0.0}}));
  CHECK(g.sample(Tensor::zeros({1, 2})).values() == g.mean.values());
  const dist::SquashedGaussian sq{g};
  const auto s = sq.sample(Tensor::zeros({1, 2}));
  CHECK(s.action[0] == doctest::Approx(std::tanh(0.4)));
  CHECK(sq.mode()[1] == doctest::Approx(std::tanh(-0.7)));
  CHECK_THROWS(g.sample(Tensor::zeros({1, 3})));

  const auto narrow = dist::DiagGaussian::from_raw(Tensor::matrix({{0.4}}), Tensor::matrix({{-20.0}}));
  CHECK(narrow.sample(Tensor::matrix({{3.0}}))[0] == doctest::Approx(0.4).epsilon(1e-7));
}

TEST_CASE("sample covariance matches diag(std^2)") {
  std::mt19937_64 rng(1);
  const std::size_t n = 100000;
  Tensor mean = Tensor::zeros({n, 2});
  Tensor log_std = Tensor::zeros({n, 2});
  for (std::size_t r = 0; r < n; ++r) {
    mean[2 * r] = 1.0;
    mean[2 * r + 1] = -2.0;
    log_std[2 * r] = std::log(0.5);
    log_std[2 * r + 1] = std::log(1.5);
  }
  const auto g = dist::DiagGaussian::from_raw(mean, log_std);
  const Tensor x = g.sample(dist::standard_normal({n, 2}, rng));
  double m[2] = {0, 0}, c[3] = {0, 0, 0};
  for (std::size_t r = 0; r < n; ++r) {
    m[0] += x[2 * r] / n;
    m[1] += x[2 * r + 1] / n;
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double d0 = x[2 * r] - m[0], d1 = x[2 * r + 1] - m[1];
    c[0] += d0 * d0 / (n - 1);
    c[1] += d0 * d1 / (n - 1);
    c[2] += d1 * d1 / (n - 1);
  }
  const double s0 = 0.5, s1 = 1.5;
  // Standard errors of the sample (co)variance of a Gaussian.
  CHECK(std::abs(c[0] - s0 * s0) < 3 * std::sqrt(2.0 / n) * s0 * s0);
  CHECK(std::abs(c[2] - s1 * s1) < 3 * std::sqrt(2.0 / n) * s1 * s1);
  CHECK(std::abs(c[1]) < 3 * s0 * s1 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("densities integrate to one") {
  SUBCASE("diagonal gaussian, d = 1") {
    const std::size_t n = 20000;
    const double lo = -8.0, hi = 8.0, h = (hi - lo) / n;
    Tensor xs = Tensor::zeros({n, 1});
    for (std::size_t k = 0; k < n; ++k) xs[k] = lo + (k + 0.5) * h;
    const auto wide = dist::DiagGaussian::from_raw(Tensor::filled({n, 1}, 0.2), Tensor::filled({n, 1}, -0.3));
    const Tensor lp = wide.log_prob(xs);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += std::exp(lp[k]) * h;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("diagonal gaussian, d = 2") {
    const std::size_t side = 400;
    const double lo = -6.0, hi = 6.0, h = (hi - lo) / side;
    Tensor xs = Tensor::zeros({side * side, 2});
    for (std::size_t a = 0; a < side; ++a) {
      for (std::size_t b = 0; b < side; ++b) {
        xs[2 * (a * side + b)] = lo + (a + 0.5) * h;
        xs[2 * (a * side + b) + 1] = lo + (b + 0.5) * h;
      }
    }
    Tensor mean = Tensor::zeros({side * side, 2});
    Tensor log_std = Tensor::zeros({side * side, 2});
    for (std::size_t r = 0; r < side * side; ++r) {
      mean[2 * r] = -0.5;
      log_std[2 * r + 1] = -0.7;
    }
    const Tensor lp = dist::DiagGaussian::from_raw(mean, log_std).log_prob(xs);
    double total = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) total += std::exp(lp[k]) * h * h;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("squashed gaussian, d = 1") {
    const std::size_t n = 200000;
    const double h = 2.0 / n;
    Tensor as = Tensor::zeros({n, 1});
    for (std::size_t k = 0; k < n; ++k) as[k] = -1.0 + (k + 0.5) * h;
    const dist::SquashedGaussian sq{
        dist::DiagGaussian::from_raw(Tensor::filled({n, 1}, 0.3), Tensor::filled({n, 1}, -0.5))};
    const Tensor lp = sq.log_prob(as);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) total += std::exp(lp[k]) * h;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("squashed log_prob agrees between action and pre-squash forms") {
  const dist::SquashedGaussian sq{
      dist::DiagGaussian::from_raw(Tensor::matrix({{0.1, -0.4}}), Tensor::matrix({{-0.2, -1.0}}))};
  const Tensor u = Tensor::matrix({{0.7, -0.3}});
  const Tensor a = tanh(u);
  CHECK(sq.log_prob(a).item() == doctest::Approx(sq.log_prob_pre_squash(u).item()).epsilon(1e-9));
  CHECK_THROWS_AS(sq.log_prob(Tensor::matrix({{1.0, 0.0}})), std::domain_error);
  CHECK_THROWS_AS(sq.log_prob(Tensor::matrix({{0.0, -1.5}})), std::domain_error);
}

TEST_CASE("reparameterized gradient matches finite differences with common noise") {
  std::mt19937_64 rng(4);
  const std::size_t n = 64;
  const Tensor noise = dist::standard_normal({n, 2}, rng);
  const Tensor target = Tensor::matrix({{0.3, -0.2}});
  auto objective = [&](const Tensor& mean_row, const Tensor& log_std_row) {
    const Tensor zeros = Tensor::zeros({n, 2});
    const auto g = dist::DiagGaussian::from_raw(add_row(zeros, mean_row), add_row(zeros, log_std_row));
    const dist::SquashedGaussian sq{g};
    return mean(sum_cols(square(add_row(sq.sample(noise).action, scale(target, -1.0)))));
  };
  const Tensor mu = Tensor::vector({0.1, 0.5});
  const Tensor ls = Tensor::vector({-0.7, -1.1});
  ad::Tape tape;
  ad::Gradients g = tape.backward(objective(tape.watch(mu), tape.watch(ls)));
  CHECK(max_relative_error(g.of(mu), numeric_gradient([&](const Tensor& v) { return objective(v, ls).item(); }, mu)) <
        1e-3);
  CHECK(max_relative_error(g.of(ls), numeric_gradient([&](const Tensor& v) { return objective(mu, v).item(); }, ls)) <
        1e-3);
}

TEST_CASE("variational log q closed form") {
  const auto q = identity_q(0.2);
  const Tensor a_i = Tensor::matrix({{0.25, -0.5}});
  const Tensor o = Tensor::matrix({{0.0}});
  const double at_mean = dist::variational_log_q(q, a_i, a_i, o, o, 1, nullptr).item();
  CHECK(at_mean == doctest::Approx(-std::log(2.0 * std::numbers::pi * 0.04)).epsilon(1e-14));
  CHECK(at_mean == doctest::Approx(1.38100).epsilon(1e-5));

  double previous = at_mean;
  for (double d : {0.01, 0.1, 0.3, 1.0}) {
    const double now = dist::variational_log_q(q, a_i, a_i + Tensor::matrix({{d, 0.0}}), o, o, 1, nullptr).item();
    CHECK(now < previous);
    previous = now;
  }

  CHECK_THROWS(dist::variational_log_q(identity_q(0.0), a_i, a_i, o, o, 1, nullptr));
  CHECK_THROWS(dist::variational_log_q(identity_q(-1.0), a_i, a_i, o, o, 1, nullptr));
}

TEST_CASE("gradient of -log q with respect to the mean") {
  const double sigma = 0.3;
  const Tensor target = Tensor::matrix({{0.2, 0.9}});
  const Tensor mu = Tensor::matrix({{-0.1, 0.4}});
  ad::Tape tape;
  ad::Gradients g = tape.backward(scale(sum(dist::gaussian_log_density(target, tape.watch(mu), sigma)), -1.0));
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(g.of(mu)[k] == doctest::Approx((mu[k] - target[k]) / (sigma * sigma)).epsilon(1e-12));
  }
}

TEST_CASE("paired log q propagates gradient through factor (b) only") {
  std::mt19937_64 rng(6);
  // Separate mean networks per target agent so factor (a) has parameters of
  // its own: predicting agent 0 uses xi_a, predicting agent 1 uses xi_b.
  ad::Mlp xi_a(2 + 1 + 1, {8}, 2, rng);
  ad::Mlp xi_b(2 + 1 + 1, {8}, 2, rng);
  dist::VariationalGaussian q;
  q.mean_fn = [&](const Tensor& given, const Tensor& oi, const Tensor& oj, std::size_t target, ad::Tape* tape) {
    const Tensor parts[] = {given, oi, oj};
    return (target == 0 ? xi_a : xi_b).forward(ad::concat_cols(parts), tape);
  };
  const Tensor o_i = Tensor::matrix({{0.3}, {-0.2}});
  const Tensor o_j = Tensor::matrix({{-0.6}, {0.1}});
  const Tensor a_i = Tensor::matrix({{0.1, 0.2}, {-0.3, 0.5}});
  const Tensor a_j = Tensor::matrix({{-0.4, 0.0}, {0.2, 0.2}});

  auto run = [&](double* value) {
    ad::Tape tape;
    const Tensor ai = tape.input(a_i);
    const auto pair = dist::paired_log_q(q, ai, a_j, o_i, o_j, 0, 1, &tape);
    CHECK_FALSE(pair.factor_a.tracked());
    const Tensor total = sum(pair.total());
    *value = total.item();
    ad::Gradients g = tape.backward(total);
    for (const auto& w : xi_a.weights()) CHECK(g.of(w).values() == std::vector<double>(w.size(), 0.0));
    std::vector<double> flat = tape.grad_of(ai).values();
    for (const auto& w : xi_b.weights()) {
      const auto gw = g.of(w).values();
      flat.insert(flat.end(), gw.begin(), gw.end());
    }
    return flat;
  };

  double before = 0.0;
  const auto grads_before = run(&before);
  for (auto& w : xi_a.weights()) {
    for (std::size_t k = 0; k < w.size(); ++k) w[k] += 0.25;
  }
  double after = 0.0;
  const auto grads_after = run(&after);
  CHECK(before != after);
  CHECK(grads_before == grads_after);

  const auto pair = dist::paired_log_q(q, a_i, a_j, o_i, o_j, 0, 1, nullptr);
  const auto expected_a = dist::variational_log_q(q, a_j, a_i, o_i, o_j, 0, nullptr);
  CHECK(pair.factor_a.values() == expected_a.values());
  CHECK(pair.total()[1] == doctest::Approx(pair.factor_a[1] + pair.factor_b[1]).epsilon(1e-14));
}

TEST_CASE("latent prior moments") {
  std::mt19937_64 rng(2);
  const dist::LatentPrior prior{3};
  const Tensor z = prior.sample(50000, rng);
  CHECK(z.shape() == ad::Shape{50000, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < 50000; ++r) m += z.at(r, c) / 50000.0;
    for (std::size_t r = 0; r < 50000; ++r) v += (z.at(r, c) - m) * (z.at(r, c) - m) / 49999.0;
    CHECK(std::abs(m) < 4.0 / std::sqrt(50000.0));
    CHECK(std::abs(v - 1.0) < 4.0 * std::sqrt(2.0 / 50000.0));
  }
  CHECK(prior.mean(4).values() == std::vector<double>(12, 0.0));
  CHECK(dist::LatentPrior{0}.sample(5, rng).shape() == ad::Shape{5, 0});
}
