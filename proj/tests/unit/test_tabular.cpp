#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "vm3ac/tabular/tabular.hpp"

using namespace vm3ac::tabular;

namespace {

// Z in {0, 1} uniform, both agents copy z deterministically, one state.
LatentTabularPolicy copy_policy() {
  LatentTabularPolicy p;
  p.n_states = 1;
  p.n_actions = {2, 2};
  p.prior = {0.5, 0.5};
  p.tables = {{1, 0, 0, 1}, {1, 0, 0, 1}};
  return p;
}

double plain_entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p) h -= v > 0 ? v * std::log(v) : 0.0;
  return h;
}

// MI from the full joint histogram as H(a) + H(b) - H(a, b), agents 0 and 1.
double histogram_mi(const LatentTabularPolicy& policy, std::size_t s) {
  const auto joint = joint_action_dist(policy, s);
  const std::size_t n0 = policy.n_actions[0], n1 = policy.n_actions[1];
  const std::size_t rest = joint.size() / (n0 * n1);
  std::vector<double> h0(n0, 0), h1(n1, 0), h01(n0 * n1, 0);
  for (std::size_t k = 0; k < joint.size(); ++k) {
    const std::size_t a0 = k / (n1 * rest), a1 = (k / rest) % n1;
    h0[a0] += joint[k];
    h1[a1] += joint[k];
    h01[a0 * n1 + a1] += joint[k];
  }
  return plain_entropy(h0) + plain_entropy(h1) - plain_entropy(h01);
}

// Standard policy evaluation for a fixed joint policy, solved by Gauss-Jordan
// on the state values, then Q = r + gamma P V.
std::vector<double> plain_evaluation(const MarkovGame& g, const std::vector<std::vector<double>>& joint_policy) {
  const std::size_t ns = g.n_states, nj = g.n_joint();
  std::vector<std::vector<double>> m(ns, std::vector<double>(ns + 1, 0.0));
  for (std::size_t s = 0; s < ns; ++s) {
    m[s][s] = 1.0;
    for (std::size_t a = 0; a < nj; ++a) {
      m[s][ns] += joint_policy[s][a] * g.r(s, a);
      for (std::size_t t = 0; t < ns; ++t) m[s][t] -= g.gamma * joint_policy[s][a] * g.p(s, a, t);
    }
  }
  for (std::size_t c = 0; c < ns; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < ns; ++r) {
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    }
    std::swap(m[c], m[piv]);
    for (std::size_t r = 0; r < ns; ++r) {
      if (r == c) continue;
      const double f = m[r][c] / m[c][c];
      for (std::size_t k = c; k <= ns; ++k) m[r][k] -= f * m[c][k];
    }
  }
  std::vector<double> v(ns);
  for (std::size_t s = 0; s < ns; ++s) v[s] = m[s][ns] / m[s][s];
  std::vector<double> q(ns * nj);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < nj; ++a) {
      double next = 0;
      for (std::size_t t = 0; t < ns; ++t) next += g.p(s, a, t) * v[t];
      q[s * nj + a] = g.r(s, a) + g.gamma * next;
    }
  }
  return q;
}

}  // namespace

TEST_CASE("joint action distribution") {
  std::mt19937_64 rng(1);
  const auto indep = random_policy(rng, 2, {2, 3}, 1);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto joint = joint_action_dist(indep, s);
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        CHECK(joint[a * 3 + b] == doctest::Approx(indep.prob(0, s, 0, a) * indep.prob(1, s, 0, b)).epsilon(1e-14));
      }
    }
  }
  const auto copy = joint_action_dist(copy_policy(), 0);
  CHECK(copy == std::vector<double>{0.5, 0.0, 0.0, 0.5});

  const auto three = random_policy(rng, 3, {2, 3, 2}, 2);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto joint = joint_action_dist(three, s);
    for (std::size_t a = 0; a < 2; ++a) {
      double m = 0;
      for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t c = 0; c < 2; ++c) m += joint[(a * 3 + b) * 2 + c];
      }
      CHECK(std::abs(m - three.marginal(0, s, a)) < 1e-12);
    }
  }
}

TEST_CASE("exact mutual information") {
  std::mt19937_64 rng(2);
  const auto indep = random_policy(rng, 1, {3, 2}, 1);
  CHECK(exact_mi(indep, 0, 0, 1) == doctest::Approx(0.0));
  CHECK(exact_mi(copy_policy(), 0, 0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS(exact_mi(indep, 0, 1, 1));
  for (int t = 0; t < 50; ++t) {
    const auto p = random_policy(rng, 2, {3, 2, 2}, 3);
    for (std::size_t s = 0; s < 2; ++s) {
      const double mi = exact_mi(p, s, 0, 1);
      CHECK(mi >= 0.0);
      CHECK(std::abs(mi - exact_mi(p, s, 1, 0)) < 1e-12);
      CHECK(std::abs(mi - histogram_mi(p, s)) < 1e-10);
    }
  }
}

TEST_CASE("variational lower bound") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto p = random_policy(rng, 2, {3, 3}, 2);
    const auto q_true = induced_conditionals(p);
    const auto q_rand = random_variational(rng, 2, {3, 3});
    for (std::size_t s = 0; s < 2; ++s) {
      const double mi = exact_mi(p, s, 0, 1);
      const auto tight = mi_lower_bound(p, s, 0, 1, q_true);
      CHECK(std::abs(tight.one_sided - mi) < 1e-10);
      CHECK(std::abs(tight.symmetric - mi) < 1e-10);
      const auto loose = mi_lower_bound(p, s, 0, 1, q_rand);
      CHECK(loose.one_sided < mi);
      CHECK(loose.symmetric < mi);
    }
  }

  // Independent actions and q equal to the marginal: the bound is zero.
  const auto indep = random_policy(rng, 1, {2, 3}, 1);
  VariationalTables marg = VariationalTables::uniform(1, {2, 3});
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 3; ++b) marg.set(0, 1, 0, a, b, indep.marginal(1, 0, b));
  }
  CHECK(std::abs(mi_lower_bound(indep, 0, 0, 1, marg).one_sided) < 1e-14);
}

TEST_CASE("zero q mass on a realized action gives -inf") {
  const auto p = copy_policy();
  VariationalTables q = VariationalTables::uniform(1, {2, 2});
  q.set(0, 1, 0, 0, 0, 0.0);
  q.set(0, 1, 0, 0, 1, 1.0);
  const auto b = mi_lower_bound(p, 0, 0, 1, q);
  CHECK(b.one_sided == -std::numeric_limits<double>::infinity());
  CHECK(b.symmetric == -std::numeric_limits<double>::infinity());
}

TEST_CASE("bellman operator") {
  std::mt19937_64 rng(4);
  SUBCASE("gamma = 0 returns the reward table") {
    const auto g = random_game(rng, 3, {2, 2}, 0.0);
    const auto p = random_policy(rng, 3, {2, 2}, 2);
    const auto q = random_variational(rng, 3, {2, 2});
    TabularQ q_in(3 * 4, 7.0);
    CHECK(bellman_apply(g, p, q, q_in, 0, 0.3) == g.reward);
  }
  SUBCASE("beta = 0 with one latent value is plain policy evaluation") {
    const auto g = random_game(rng, 4, {2, 3}, 0.9);
    const auto p = random_policy(rng, 4, {2, 3}, 1);
    const auto q = random_variational(rng, 4, {2, 3});
    std::vector<std::vector<double>> joint(4);
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 3; ++b) joint[s].push_back(p.prob(0, s, 0, a) * p.prob(1, s, 0, b));
      }
    }
    const auto oracle = plain_evaluation(g, joint);
    const auto fixed = variational_policy_evaluation(g, p, q, 0, 0.0, 1e-12);
    CHECK(sup_norm_diff(fixed.q, oracle) < 1e-10);
    CHECK(sup_norm_diff(bellman_apply(g, p, q, oracle, 1, 0.0), oracle) < 1e-12);
  }
  SUBCASE("contraction in sup-norm") {
    std::uniform_real_distribution<double> u(-10, 10);
    for (int t = 0; t < 100; ++t) {
      const auto g = random_game(rng, 3, {2, 3}, 0.9);
      const auto p = random_policy(rng, 3, {2, 3}, 2);
      const auto q = random_variational(rng, 3, {2, 3});
      TabularQ a(18), b(18);
      for (std::size_t k = 0; k < 18; ++k) {
        a[k] = u(rng);
        b[k] = u(rng);
      }
      CHECK(sup_norm_diff(bellman_apply(g, p, q, a, 0, 0.3), bellman_apply(g, p, q, b, 0, 0.3)) <=
            0.9 * sup_norm_diff(a, b) + 1e-10);
    }
  }
}

TEST_CASE("variational policy evaluation") {
  std::mt19937_64 rng(5);
  const double tol = 1e-10;
  const auto g = random_game(rng, 4, {2, 2}, 0.9);
  const auto p = random_policy(rng, 4, {2, 2}, 2);
  const auto q = random_variational(rng, 4, {2, 2});
  TabularQ start(16);
  std::uniform_real_distribution<double> u(-20, 20);
  for (auto& v : start) v = u(rng);
  const auto from_zero = variational_policy_evaluation(g, p, q, 1, 0.3, tol);
  const auto from_random = variational_policy_evaluation(g, p, q, 1, 0.3, tol, start);
  CHECK(sup_norm_diff(from_zero.q, from_random.q) < 2 * tol);
  CHECK(sup_norm_diff(bellman_apply(g, p, q, from_zero.q, 1, 0.3), from_zero.q) < tol);
  CHECK(sup_norm_diff(from_zero.q, solve_policy_evaluation(g, p, q, 1, 0.3)) < 1e-8);
  CHECK_THROWS_AS(variational_policy_evaluation(g, p, q, 1, 0.3, tol, {}, 5), std::runtime_error);
  CHECK_THROWS(variational_policy_evaluation(g, p, q, 1, 0.3, 0.0));
}

TEST_CASE("policy improvement") {
  std::mt19937_64 rng(6);
  SUBCASE("unchanged policy gives zero violation") {
    const auto g = random_game(rng, 3, {2, 2}, 0.9);
    const auto p = random_policy(rng, 3, {2, 2}, 2);
    const auto q = induced_conditionals(p);
    const auto q_old = solve_policy_evaluation(g, p, q, 0, 0.3);
    const auto r = improvement_check(g, q_old, p, q, 0, 0.3);
    CHECK(r.improved);
    CHECK(r.max_violation < 1e-12);
  }
  SUBCASE("random games improve everywhere") {
    for (int t = 0; t < 20; ++t) {
      const auto g = random_game(rng, 4, {2, 2}, 0.9);
      const auto p = random_policy(rng, 4, {2, 2}, 2);
      const auto q = random_variational(rng, 4, {2, 2});
      const auto q_old = variational_policy_evaluation(g, p, q, 0, 0.3, 1e-10).q;
      const auto imp = improve_policy(g, p, q_old, 0, 0.3);
      imp.policy.validate();
      const auto r = improvement_check(g, q_old, imp.policy, imp.q, 0, 0.3);
      CHECK(r.improved);
      CHECK(r.max_violation <= 1e-9);
      for (std::size_t s = 0; s < 4; ++s) {
        CHECK(improvement_objective(g, imp.policy, imp.q, q_old, 0, 0.3, s) >=
              improvement_objective(g, p, q, q_old, 0, 0.3, s) - 1e-12);
      }
    }
  }
  SUBCASE("beta = 0 and one latent value match greedy improvement") {
    const auto g = random_game(rng, 4, {3, 2}, 0.9);
    const auto p = random_policy(rng, 4, {3, 2}, 1);
    const auto q = induced_conditionals(p);
    const auto q_old = solve_policy_evaluation(g, p, q, 0, 0.0);
    const auto imp = improve_policy(g, p, q_old, 0, 0.0);
    std::vector<std::vector<double>> greedy_joint(4);
    for (std::size_t s = 0; s < 4; ++s) {
      std::size_t best = 0;
      double best_value = -1e300;
      for (std::size_t a = 0; a < 3; ++a) {
        double v = 0;
        for (std::size_t b = 0; b < 2; ++b) v += p.prob(1, s, 0, b) * q_old[s * 6 + a * 2 + b];
        if (v > best_value) {
          best_value = v;
          best = a;
        }
      }
      for (std::size_t a = 0; a < 3; ++a) {
        CHECK(imp.policy.prob(0, s, 0, a) == (a == best ? 1.0 : 0.0));
        for (std::size_t b = 0; b < 2; ++b) greedy_joint[s].push_back(a == best ? p.prob(1, s, 0, b) : 0.0);
      }
    }
    const auto r = improvement_check(g, q_old, imp.policy, imp.q, 0, 0.0);
    CHECK(sup_norm_diff(r.q_new, plain_evaluation(g, greedy_joint)) < 1e-10);
    CHECK(r.improved);
  }
}

TEST_CASE("validation errors") {
  std::mt19937_64 rng(7);
  auto g = random_game(rng, 2, {2, 2}, 0.9);
  g.validate();
  g.transition[0] += 0.1;
  CHECK_THROWS(g.validate());
  auto g2 = random_game(rng, 2, {2, 2}, 1.0);
  CHECK_THROWS(g2.validate());
  auto p = random_policy(rng, 2, {2, 2}, 2);
  p.validate();
  p.tables[1][0] = 2.0;
  CHECK_THROWS(p.validate());
  CHECK(g.encode(g.decode(3)) == 3);
}

TEST_CASE("property suite passes and the negative control fails") {
  SuiteConfig cfg;
  cfg.trials = 10;
  cfg.seed = 9;
  const auto good = run_suite(cfg);
  for (const auto& c : good.checks) {
    INFO(c.name << " " << c.detail << " worst=" << c.worst);
    CHECK(c.passed);
  }
  cfg.fault = BellmanFault::flip_bonus_sign;
  const auto bad = run_suite(cfg);
  CHECK_FALSE(bad.passed());
  CHECK_FALSE(bad.get("evaluation_fixed_point").passed);
}
