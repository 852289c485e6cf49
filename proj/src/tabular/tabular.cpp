#include "vm3ac/tabular/tabular.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vm3ac::tabular {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t product(const std::vector<std::size_t>& sizes) {
  return std::accumulate(sizes.begin(), sizes.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<std::size_t> decode_joint(const std::vector<std::size_t>& n_actions, std::size_t joint) {
  std::vector<std::size_t> actions(n_actions.size());
  for (std::size_t k = n_actions.size(); k-- > 0;) {
    actions[k] = joint % n_actions[k];
    joint /= n_actions[k];
  }
  return actions;
}

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

void check_row(const double* row, std::size_t n, const std::string& what) {
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(row[k] >= 0.0) || !std::isfinite(row[k])) throw std::invalid_argument(what + ": negative or non-finite entry");
    total += row[k];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg << what << ": row sums to " << total;
    throw std::invalid_argument(msg.str());
  }
}

// Conditional p(a^target | a^given, s) of a pair joint table.
std::vector<double> conditional_from_pair(const std::vector<double>& pj, std::size_t n_i, std::size_t n_j,
                                          bool given_is_first) {
  const std::size_t n_given = given_is_first ? n_i : n_j;
  const std::size_t n_target = given_is_first ? n_j : n_i;
  std::vector<double> out(n_given * n_target, 0.0);
  for (std::size_t g = 0; g < n_given; ++g) {
    double mass = 0.0;
    for (std::size_t t = 0; t < n_target; ++t) mass += given_is_first ? pj[g * n_j + t] : pj[t * n_j + g];
    for (std::size_t t = 0; t < n_target; ++t) {
      const double joint = given_is_first ? pj[g * n_j + t] : pj[t * n_j + g];
      out[g * n_target + t] = mass > 0.0 ? joint / mass : 1.0 / static_cast<double>(n_target);
    }
  }
  return out;
}

// Writes the conditionals for pairs (i, j) and (j, i), j != i, at state s.
void refresh_conditionals(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, VariationalTables& q) {
  for (std::size_t j = 0; j < policy.n_agents(); ++j) {
    if (j == i) continue;
    const auto pj = pair_joint(policy, s, i, j);
    const std::size_t ni = policy.n_actions[i], nj = policy.n_actions[j];
    const auto j_given_i = conditional_from_pair(pj, ni, nj, true);
    const auto i_given_j = conditional_from_pair(pj, ni, nj, false);
    for (std::size_t g = 0; g < ni; ++g) {
      for (std::size_t t = 0; t < nj; ++t) q.set(i, j, s, g, t, j_given_i[g * nj + t]);
    }
    for (std::size_t g = 0; g < nj; ++g) {
      for (std::size_t t = 0; t < ni; ++t) q.set(j, i, s, g, t, i_given_j[g * ni + t]);
    }
  }
}

// Additive soft-value term for every joint action at one state.
std::vector<double> bonus_at(const LatentTabularPolicy& policy, const VariationalTables& q, std::size_t i,
                             double beta, std::size_t s, BellmanFault fault) {
  const std::size_t n_joint = product(policy.n_actions);
  const double n = static_cast<double>(policy.n_agents());
  std::vector<double> marginal_log(policy.n_actions[i]);
  for (std::size_t a = 0; a < policy.n_actions[i]; ++a) marginal_log[a] = safe_log(policy.marginal(i, s, a));
  std::vector<double> out(n_joint, 0.0);
  if (beta == 0.0) return out;
  for (std::size_t ja = 0; ja < n_joint; ++ja) {
    const auto a = decode_joint(policy.n_actions, ja);
    double pair_terms = 0.0;
    for (std::size_t j = 0; j < policy.n_agents(); ++j) {
      if (j == i) continue;
      pair_terms += safe_log(q.q(j, i, s, a[j], a[i])) + safe_log(q.q(i, j, s, a[i], a[j]));
    }
    double b = -beta * marginal_log[a[i]] + (beta / n) * pair_terms;
    if (fault == BellmanFault::flip_bonus_sign) b = -b;
    out[ja] = b;
  }
  return out;
}

// E_{a ~ p(.|s)}[values(a) + bonus(a)], skipping joint actions of zero mass.
double soft_expectation(const std::vector<double>& p, const double* values, const std::vector<double>& bonus) {
  double v = 0.0;
  for (std::size_t ja = 0; ja < p.size(); ++ja) {
    if (p[ja] > 0.0) v += p[ja] * (values[ja] + bonus[ja]);
  }
  return v;
}

void check_agent(std::size_t i, std::size_t n) {
  if (i >= n) throw std::invalid_argument("tabular: agent index " + std::to_string(i) + " out of range");
}

}  // namespace

std::size_t MarkovGame::n_joint() const { return product(n_actions); }

std::vector<std::size_t> MarkovGame::decode(std::size_t joint) const { return decode_joint(n_actions, joint); }

std::size_t MarkovGame::encode(const std::vector<std::size_t>& actions) const {
  if (actions.size() != n_actions.size()) throw std::invalid_argument("encode: wrong agent count");
  std::size_t joint = 0;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    if (actions[k] >= n_actions[k]) throw std::invalid_argument("encode: action out of range");
    joint = joint * n_actions[k] + actions[k];
  }
  return joint;
}

void MarkovGame::validate() const {
  if (n_states == 0 || n_actions.empty()) throw std::invalid_argument("game: empty state or agent set");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("game: gamma must lie in [0, 1)");
  const std::size_t nj = n_joint();
  if (transition.size() != n_states * nj * n_states) throw std::invalid_argument("game: transition table size");
  if (reward.size() != n_states * nj) throw std::invalid_argument("game: reward table size");
  for (std::size_t row = 0; row < n_states * nj; ++row) {
    check_row(&transition[row * n_states], n_states, "game transition");
  }
  for (double r : reward) {
    if (!std::isfinite(r)) throw std::invalid_argument("game: non-finite reward");
  }
}

double LatentTabularPolicy::marginal(std::size_t i, std::size_t s, std::size_t a) const {
  double m = 0.0;
  for (std::size_t z = 0; z < n_latent(); ++z) m += prob(i, s, z, a) * prior[z];
  return m;
}

void LatentTabularPolicy::validate() const {
  if (prior.empty()) throw std::invalid_argument("policy: empty latent set");
  check_row(prior.data(), prior.size(), "latent prior");
  if (tables.size() != n_actions.size()) throw std::invalid_argument("policy: one table per agent required");
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (tables[i].size() != n_states * n_latent() * n_actions[i]) {
      throw std::invalid_argument("policy: table size for agent " + std::to_string(i));
    }
    for (std::size_t row = 0; row < n_states * n_latent(); ++row) {
      check_row(&tables[i][row * n_actions[i]], n_actions[i], "policy agent " + std::to_string(i));
    }
  }
}

double VariationalTables::q(std::size_t given, std::size_t target, std::size_t s, std::size_t a_given,
                            std::size_t a_target) const {
  const auto& t = tables.at({given, target});
  return t[(s * n_actions[given] + a_given) * n_actions[target] + a_target];
}

void VariationalTables::set(std::size_t given, std::size_t target, std::size_t s, std::size_t a_given,
                            std::size_t a_target, double value) {
  auto& t = tables[{given, target}];
  t.resize(n_states * n_actions[given] * n_actions[target], 0.0);
  t[(s * n_actions[given] + a_given) * n_actions[target] + a_target] = value;
}

VariationalTables VariationalTables::uniform(std::size_t n_states, const std::vector<std::size_t>& n_actions) {
  VariationalTables out;
  out.n_states = n_states;
  out.n_actions = n_actions;
  for (std::size_t g = 0; g < n_actions.size(); ++g) {
    for (std::size_t t = 0; t < n_actions.size(); ++t) {
      if (g == t) continue;
      out.tables[{g, t}] =
          std::vector<double>(n_states * n_actions[g] * n_actions[t], 1.0 / static_cast<double>(n_actions[t]));
    }
  }
  return out;
}

std::vector<double> joint_action_dist(const LatentTabularPolicy& policy, std::size_t s) {
  const std::size_t n_joint = product(policy.n_actions);
  std::vector<double> out(n_joint, 0.0);
  for (std::size_t ja = 0; ja < n_joint; ++ja) {
    const auto a = decode_joint(policy.n_actions, ja);
    for (std::size_t z = 0; z < policy.n_latent(); ++z) {
      double p = policy.prior[z];
      for (std::size_t i = 0; i < policy.n_agents(); ++i) p *= policy.prob(i, s, z, a[i]);
      out[ja] += p;
    }
  }
  return out;
}

std::vector<double> pair_joint(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, std::size_t j) {
  check_agent(i, policy.n_agents());
  check_agent(j, policy.n_agents());
  const std::size_t ni = policy.n_actions[i], nj = policy.n_actions[j];
  std::vector<double> out(ni * nj, 0.0);
  for (std::size_t z = 0; z < policy.n_latent(); ++z) {
    for (std::size_t a = 0; a < ni; ++a) {
      for (std::size_t b = 0; b < nj; ++b) {
        out[a * nj + b] += policy.prior[z] * policy.prob(i, s, z, a) * policy.prob(j, s, z, b);
      }
    }
  }
  return out;
}

double exact_mi(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, std::size_t j) {
  if (i == j) throw std::invalid_argument("exact_mi: agents must differ");
  const auto pj = pair_joint(policy, s, i, j);
  const std::size_t ni = policy.n_actions[i], nj = policy.n_actions[j];
  std::vector<double> pi(ni, 0.0), pk(nj, 0.0);
  for (std::size_t a = 0; a < ni; ++a) {
    for (std::size_t b = 0; b < nj; ++b) {
      pi[a] += pj[a * nj + b];
      pk[b] += pj[a * nj + b];
    }
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < ni; ++a) {
    for (std::size_t b = 0; b < nj; ++b) {
      const double p = pj[a * nj + b];
      if (p > 0.0) mi += p * std::log(p / (pi[a] * pk[b]));
    }
  }
  return std::max(mi, 0.0);
}

MiBound mi_lower_bound(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, std::size_t j,
                       const VariationalTables& q) {
  if (i == j) throw std::invalid_argument("mi_lower_bound: agents must differ");
  const auto pj = pair_joint(policy, s, i, j);
  const std::size_t ni = policy.n_actions[i], nj = policy.n_actions[j];
  std::vector<double> pi(ni, 0.0), pk(nj, 0.0);
  double log_q_j = 0.0, log_q_i = 0.0;
  for (std::size_t a = 0; a < ni; ++a) {
    for (std::size_t b = 0; b < nj; ++b) {
      const double p = pj[a * nj + b];
      pi[a] += p;
      pk[b] += p;
      if (p == 0.0) continue;
      log_q_j += p * safe_log(q.q(i, j, s, a, b));
      log_q_i += p * safe_log(q.q(j, i, s, b, a));
    }
  }
  MiBound out;
  out.one_sided = entropy(pk) + log_q_j;
  out.symmetric = 0.5 * (entropy(pi) + log_q_i + entropy(pk) + log_q_j);
  return out;
}

VariationalTables induced_conditionals(const LatentTabularPolicy& policy) {
  VariationalTables q = VariationalTables::uniform(policy.n_states, policy.n_actions);
  for (std::size_t s = 0; s < policy.n_states; ++s) {
    for (std::size_t i = 0; i < policy.n_agents(); ++i) refresh_conditionals(policy, s, i, q);
  }
  return q;
}

std::vector<double> bonus_table(const MarkovGame& game, const LatentTabularPolicy& policy,
                                const VariationalTables& q, std::size_t i, double beta, BellmanFault fault) {
  check_agent(i, game.n_agents());
  std::vector<double> out;
  out.reserve(game.n_states * game.n_joint());
  for (std::size_t s = 0; s < game.n_states; ++s) {
    const auto b = bonus_at(policy, q, i, beta, s, fault);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

TabularQ bellman_apply(const MarkovGame& game, const LatentTabularPolicy& policy, const VariationalTables& q,
                       const TabularQ& q_in, std::size_t i, double beta, BellmanFault fault) {
  const std::size_t ns = game.n_states, nj = game.n_joint();
  if (q_in.size() != ns * nj) throw std::invalid_argument("bellman_apply: Q table size");
  const auto bonus = bonus_table(game, policy, q, i, beta, fault);
  std::vector<double> v(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    const std::vector<double> b(bonus.begin() + s * nj, bonus.begin() + (s + 1) * nj);
    v[s] = soft_expectation(joint_action_dist(policy, s), &q_in[s * nj], b);
  }
  TabularQ out(ns * nj);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < nj; ++a) {
      double next = 0.0;
      for (std::size_t s2 = 0; s2 < ns; ++s2) next += game.p(s, a, s2) * v[s2];
      out[s * nj + a] = game.r(s, a) + game.gamma * next;
    }
  }
  return out;
}

double sup_norm_diff(const TabularQ& a, const TabularQ& b) {
  if (a.size() != b.size()) throw std::invalid_argument("sup_norm_diff: size mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  return worst;
}

EvaluationResult variational_policy_evaluation(const MarkovGame& game, const LatentTabularPolicy& policy,
                                               const VariationalTables& q, std::size_t i, double beta, double tol,
                                               const TabularQ& q0, std::size_t max_iterations,
                                               BellmanFault fault) {
  if (!(tol > 0.0)) throw std::invalid_argument("variational_policy_evaluation: tol must be positive");
  EvaluationResult result;
  result.q = q0.empty() ? TabularQ(game.n_states * game.n_joint(), 0.0) : q0;
  // Stop on the a-posteriori bound gamma/(1-gamma) * step < tol/2 so the
  // returned table is within tol/2 of the fixed point.
  const double slack = game.gamma / (1.0 - game.gamma);
  while (result.iterations < max_iterations) {
    TabularQ next = bellman_apply(game, policy, q, result.q, i, beta, fault);
    const double step = sup_norm_diff(next, result.q);
    result.q = std::move(next);
    ++result.iterations;
    if (!std::isfinite(step)) throw std::runtime_error("variational_policy_evaluation: non-finite iterate");
    if (step < tol && slack * step < 0.5 * tol) return result;
  }
  throw std::runtime_error("variational_policy_evaluation: no convergence after " +
                           std::to_string(max_iterations) + " iterations");
}

TabularQ solve_policy_evaluation(const MarkovGame& game, const LatentTabularPolicy& policy,
                                 const VariationalTables& q, std::size_t i, double beta) {
  const std::size_t ns = game.n_states, nj = game.n_joint(), n = ns * nj;
  const auto bonus = bonus_table(game, policy, q, i, beta);
  std::vector<std::vector<double>> dist(ns);
  for (std::size_t s = 0; s < ns; ++s) dist[s] = joint_action_dist(policy, s);

  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < nj; ++a) {
      const auto row = static_cast<Eigen::Index>(s * nj + a);
      double expected_bonus = 0.0;
      for (std::size_t s2 = 0; s2 < ns; ++s2) {
        for (std::size_t a2 = 0; a2 < nj; ++a2) {
          const double w = game.p(s, a, s2) * dist[s2][a2];
          if (w == 0.0) continue;
          m(row, static_cast<Eigen::Index>(s2 * nj + a2)) -= game.gamma * w;
          expected_bonus += w * bonus[s2 * nj + a2];
        }
      }
      rhs(row) = game.r(s, a) + game.gamma * expected_bonus;
    }
  }
  const Eigen::VectorXd x = m.partialPivLu().solve(rhs);
  return TabularQ(x.data(), x.data() + x.size());
}

double improvement_objective(const MarkovGame& game, const LatentTabularPolicy& policy, const VariationalTables& q,
                             const TabularQ& q_values, std::size_t i, double beta, std::size_t s) {
  const std::size_t nj = game.n_joint();
  return soft_expectation(joint_action_dist(policy, s), &q_values[s * nj],
                          bonus_at(policy, q, i, beta, s, BellmanFault::none));
}

Improvement improve_policy(const MarkovGame& game, const LatentTabularPolicy& policy_old, const TabularQ& q_old,
                           std::size_t i, double beta) {
  check_agent(i, policy_old.n_agents());
  const std::size_t nz = policy_old.n_latent(), na = policy_old.n_actions[i];
  std::size_t n_deterministic = 1;
  for (std::size_t z = 0; z < nz; ++z) n_deterministic *= na;

  Improvement best{policy_old, induced_conditionals(policy_old)};
  for (std::size_t s = 0; s < game.n_states; ++s) {
    // Incumbent first, paired with its induced conditionals.
    LatentTabularPolicy candidate = best.policy;
    VariationalTables cand_q = best.q;
    double best_value = improvement_objective(game, candidate, cand_q, q_old, i, beta, s);
    std::vector<double> best_rows(nz * na);
    for (std::size_t z = 0; z < nz; ++z) {
      for (std::size_t a = 0; a < na; ++a) best_rows[z * na + a] = candidate.prob(i, s, z, a);
    }

    for (std::size_t code = 0; code < n_deterministic; ++code) {
      std::size_t rest = code;
      for (std::size_t z = 0; z < nz; ++z) {
        const std::size_t pick = rest % na;
        rest /= na;
        for (std::size_t a = 0; a < na; ++a) candidate.prob(i, s, z, a) = a == pick ? 1.0 : 0.0;
      }
      refresh_conditionals(candidate, s, i, cand_q);
      const double value = improvement_objective(game, candidate, cand_q, q_old, i, beta, s);
      if (value > best_value) {
        best_value = value;
        for (std::size_t z = 0; z < nz; ++z) {
          for (std::size_t a = 0; a < na; ++a) best_rows[z * na + a] = candidate.prob(i, s, z, a);
        }
      }
    }
    for (std::size_t z = 0; z < nz; ++z) {
      for (std::size_t a = 0; a < na; ++a) best.policy.prob(i, s, z, a) = best_rows[z * na + a];
    }
    refresh_conditionals(best.policy, s, i, best.q);
  }
  return best;
}

ImprovementReport improvement_check(const MarkovGame& game, const TabularQ& q_old,
                                    const LatentTabularPolicy& policy_new, const VariationalTables& q_new,
                                    std::size_t i, double beta, double tolerance) {
  ImprovementReport report;
  report.q_new = solve_policy_evaluation(game, policy_new, q_new, i, beta);
  for (std::size_t k = 0; k < q_old.size(); ++k) {
    report.max_violation = std::max(report.max_violation, q_old[k] - report.q_new[k]);
  }
  report.improved = report.max_violation <= tolerance;
  return report;
}

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> row(n);
  double total = 0.0;
  for (double& v : row) {
    v = e(rng) + 1e-3;
    total += v;
  }
  for (double& v : row) v /= total;
  return row;
}

}  // namespace

MarkovGame random_game(std::mt19937_64& rng, std::size_t n_states, const std::vector<std::size_t>& n_actions,
                       double gamma) {
  MarkovGame game;
  game.n_states = n_states;
  game.n_actions = n_actions;
  game.gamma = gamma;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t nj = game.n_joint();
  for (std::size_t row = 0; row < n_states * nj; ++row) {
    const auto p = random_simplex(rng, n_states);
    game.transition.insert(game.transition.end(), p.begin(), p.end());
  }
  for (std::size_t k = 0; k < n_states * nj; ++k) game.reward.push_back(u(rng));
  return game;
}

LatentTabularPolicy random_policy(std::mt19937_64& rng, std::size_t n_states,
                                  const std::vector<std::size_t>& n_actions, std::size_t n_latent) {
  LatentTabularPolicy policy;
  policy.n_states = n_states;
  policy.n_actions = n_actions;
  policy.prior = random_simplex(rng, n_latent);
  for (std::size_t na : n_actions) {
    std::vector<double> table;
    for (std::size_t row = 0; row < n_states * n_latent; ++row) {
      const auto p = random_simplex(rng, na);
      table.insert(table.end(), p.begin(), p.end());
    }
    policy.tables.push_back(std::move(table));
  }
  return policy;
}

VariationalTables random_variational(std::mt19937_64& rng, std::size_t n_states,
                                     const std::vector<std::size_t>& n_actions) {
  VariationalTables q = VariationalTables::uniform(n_states, n_actions);
  for (auto& [key, table] : q.tables) {
    const std::size_t nt = n_actions[key.second];
    for (std::size_t row = 0; row < table.size() / nt; ++row) {
      const auto p = random_simplex(rng, nt);
      std::copy(p.begin(), p.end(), table.begin() + static_cast<std::ptrdiff_t>(row * nt));
    }
  }
  return q;
}

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const SuiteCheck& c) { return c.passed; });
}

const SuiteCheck& SuiteReport::get(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw std::out_of_range("suite report has no check '" + name + "'");
}

SuiteReport run_suite(const SuiteConfig& config) {
  if (config.trials == 0) throw std::invalid_argument("tabular suite: trials must be at least 1");
  if (config.n_agents < 2) throw std::invalid_argument("tabular suite: need at least two agents");
  if (config.max_states < 1 || config.max_actions < 2 || config.n_latent < 1) {
    throw std::invalid_argument("tabular suite: dimensions too small");
  }
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> state_count(1, config.max_states);
  std::uniform_int_distribution<std::size_t> action_count(2, config.max_actions);
  std::uniform_real_distribution<double> u(-5.0, 5.0);

  auto named = [](const char* name) {
    SuiteCheck c;
    c.name = name;
    return c;
  };
  SuiteCheck marginal = named("marginal_consistency"), mi = named("mi_symmetry"), bound = named("mi_bound"),
             tight = named("mi_bound_tight"), contraction = named("contraction"),
             evaluation = named("evaluation_fixed_point"), residual = named("fixed_point_residual"),
             improvement = named("improvement");

  auto fail = [](SuiteCheck& c, const std::string& detail) {
    c.passed = false;
    ++c.failures;
    if (c.detail.empty()) c.detail = detail;
  };

  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    const std::size_t ns = state_count(rng);
    std::vector<std::size_t> na(config.n_agents);
    for (auto& n : na) n = action_count(rng);
    const MarkovGame game = random_game(rng, ns, na, config.gamma);
    const LatentTabularPolicy policy = random_policy(rng, ns, na, config.n_latent);
    const VariationalTables q_random = random_variational(rng, ns, na);
    const VariationalTables q_true = induced_conditionals(policy);
    const std::string where = "trial " + std::to_string(trial);

    for (std::size_t s = 0; s < ns; ++s) {
      const auto joint = joint_action_dist(policy, s);
      for (std::size_t i = 0; i < config.n_agents; ++i) {
        for (std::size_t a = 0; a < na[i]; ++a) {
          double m = 0.0;
          for (std::size_t ja = 0; ja < joint.size(); ++ja) {
            if (game.decode(ja)[i] == a) m += joint[ja];
          }
          const double err = std::abs(m - policy.marginal(i, s, a));
          ++marginal.cases;
          marginal.worst = std::max(marginal.worst, err);
          if (err > 1e-12) fail(marginal, where);
        }
      }
      for (std::size_t i = 0; i < config.n_agents; ++i) {
        for (std::size_t j = i + 1; j < config.n_agents; ++j) {
          const double ij = exact_mi(policy, s, i, j);
          const double ji = exact_mi(policy, s, j, i);
          ++mi.cases;
          mi.worst = std::max(mi.worst, std::abs(ij - ji));
          if (ij < 0.0 || std::abs(ij - ji) > 1e-12) fail(mi, where);

          for (auto [gi, gj] : {std::pair{i, j}, std::pair{j, i}}) {
            const auto loose = mi_lower_bound(policy, s, gi, gj, q_random);
            ++bound.cases;
            bound.worst = std::max({bound.worst, loose.one_sided - ij, loose.symmetric - ij});
            if (loose.one_sided > ij + 1e-12 || loose.symmetric > ij + 1e-12) fail(bound, where);
            const auto exact = mi_lower_bound(policy, s, gi, gj, q_true);
            const double err = std::max(std::abs(exact.one_sided - ij), std::abs(exact.symmetric - ij));
            ++tight.cases;
            tight.worst = std::max(tight.worst, err);
            if (err >= 1e-10) fail(tight, where);
          }
        }
      }
    }

    const std::size_t i = trial % config.n_agents;
    const std::size_t n = ns * game.n_joint();
    for (int pair = 0; pair < 3; ++pair) {
      TabularQ a(n), b(n);
      for (std::size_t k = 0; k < n; ++k) {
        a[k] = u(rng);
        b[k] = u(rng);
      }
      const double denom = sup_norm_diff(a, b);
      const double ratio =
          sup_norm_diff(bellman_apply(game, policy, q_random, a, i, config.beta, config.fault),
                        bellman_apply(game, policy, q_random, b, i, config.beta, config.fault)) /
          denom;
      ++contraction.cases;
      contraction.worst = std::max(contraction.worst, ratio);
      if (ratio > config.gamma + 1e-10) fail(contraction, where);
    }

    TabularQ random_start(n);
    for (auto& v : random_start) v = u(rng);
    const TabularQ direct = solve_policy_evaluation(game, policy, q_random, i, config.beta);
    for (const TabularQ& start : {TabularQ{}, random_start}) {
      const auto fixed = variational_policy_evaluation(game, policy, q_random, i, config.beta, config.tol, start,
                                                       1000000, config.fault);
      const double err = sup_norm_diff(fixed.q, direct);
      ++evaluation.cases;
      evaluation.worst = std::max(evaluation.worst, err);
      if (err > 1e-8) fail(evaluation, where);
      const double res =
          sup_norm_diff(bellman_apply(game, policy, q_random, fixed.q, i, config.beta, config.fault), fixed.q);
      ++residual.cases;
      residual.worst = std::max(residual.worst, res);
      if (res >= config.tol) fail(residual, where);
    }

    const auto q_old = variational_policy_evaluation(game, policy, q_random, i, config.beta, config.tol, {},
                                                     1000000, config.fault)
                           .q;
    const auto improved = improve_policy(game, policy, q_old, i, config.beta);
    const auto report = improvement_check(game, q_old, improved.policy, improved.q, i, config.beta);
    ++improvement.cases;
    improvement.worst = std::max(improvement.worst, report.max_violation);
    if (!report.improved) fail(improvement, where);
  }

  SuiteReport out;
  out.checks = {marginal, mi, bound, tight, contraction, evaluation, residual, improvement};
  return out;
}

}  // namespace vm3ac::tabular
