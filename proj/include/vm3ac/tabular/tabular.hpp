#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace vm3ac::tabular {

/// Finite N-agent Markov game. Joint actions are flattened in mixed radix
/// with agent 0 as the most significant digit.
struct MarkovGame {
  std::size_t n_states = 0;
  std::vector<std::size_t> n_actions;
  /// P[(s * n_joint + a) * n_states + s'].
  std::vector<double> transition;
  /// R[s * n_joint + a].
  std::vector<double> reward;
  double gamma = 0.9;

  std::size_t n_agents() const { return n_actions.size(); }
  std::size_t n_joint() const;
  std::vector<std::size_t> decode(std::size_t joint) const;
  std::size_t encode(const std::vector<std::size_t>& actions) const;

  double p(std::size_t s, std::size_t joint, std::size_t next) const {
    return transition[(s * n_joint() + joint) * n_states + next];
  }
  double r(std::size_t s, std::size_t joint) const { return reward[s * n_joint() + joint]; }

  /// Throws std::invalid_argument if sizes, row sums, rewards or gamma are off.
  void validate() const;
};

/// Per-agent tables pi^i(a^i | s, z) over a finite latent set with prior p_Z.
struct LatentTabularPolicy {
  std::size_t n_states = 0;
  std::vector<std::size_t> n_actions;
  std::vector<double> prior;
  /// tables[i][(s * |Z| + z) * |A_i| + a].
  std::vector<std::vector<double>> tables;

  std::size_t n_latent() const { return prior.size(); }
  std::size_t n_agents() const { return n_actions.size(); }

  double prob(std::size_t i, std::size_t s, std::size_t z, std::size_t a) const {
    return tables[i][(s * n_latent() + z) * n_actions[i] + a];
  }
  double& prob(std::size_t i, std::size_t s, std::size_t z, std::size_t a) {
    return tables[i][(s * n_latent() + z) * n_actions[i] + a];
  }
  /// The marginal over z: sum_z pi^i(a | s, z) p_Z(z).
  double marginal(std::size_t i, std::size_t s, std::size_t a) const;

  void validate() const;
};

/// Conditional tables q(a^target | a^given, s) for ordered agent pairs.
struct VariationalTables {
  std::size_t n_states = 0;
  std::vector<std::size_t> n_actions;
  /// Keyed by (given, target); layout [(s * |A_given| + a_given) * |A_target| + a_target].
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> tables;

  double q(std::size_t given, std::size_t target, std::size_t s, std::size_t a_given, std::size_t a_target) const;
  void set(std::size_t given, std::size_t target, std::size_t s, std::size_t a_given, std::size_t a_target,
           double value);

  /// All-uniform tables for every ordered pair.
  static VariationalTables uniform(std::size_t n_states, const std::vector<std::size_t>& n_actions);
};

/// Q_i(s, a) for one agent, layout [s * n_joint + a].
using TabularQ = std::vector<double>;

/// p(a^1..a^N | s) = sum_z p_Z(z) prod_i pi^i(a^i | s, z).
std::vector<double> joint_action_dist(const LatentTabularPolicy& policy, std::size_t s);

/// p(a^i, a^j | s) as a row-major |A_i| x |A_j| table.
std::vector<double> pair_joint(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, std::size_t j);

/// I(a^i; a^j | s) in nats.
double exact_mi(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, std::size_t j);

struct MiBound {
  /// H(a^j|s) + E[log q(a^j | a^i, s)].
  double one_sided = 0.0;
  /// The symmetric form: half the sum of both one-sided bounds.
  double symmetric = 0.0;
};

/// Either field is -inf when q puts zero mass on a realized action.
MiBound mi_lower_bound(const LatentTabularPolicy& policy, std::size_t s, std::size_t i, std::size_t j,
                       const VariationalTables& q);

/// True conditionals p(a^target | a^given, s) for every ordered pair; rows
/// with zero given-probability are set uniform.
VariationalTables induced_conditionals(const LatentTabularPolicy& policy);

enum class BellmanFault {
  none,
  /// Test hook: flips the sign of the entropy and variational terms.
  flip_bonus_sign,
};

/// Per-(s, a) additive term of the soft value for agent i:
/// -beta log pi~^i(a^i|s) + (beta/N) sum_{j != i} [log q(a^i|a^j,s) + log q(a^j|a^i,s)].
std::vector<double> bonus_table(const MarkovGame& game, const LatentTabularPolicy& policy,
                                const VariationalTables& q, std::size_t i, double beta,
                                BellmanFault fault = BellmanFault::none);

/// (T Q)(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V_i(s').
TabularQ bellman_apply(const MarkovGame& game, const LatentTabularPolicy& policy, const VariationalTables& q,
                       const TabularQ& q_in, std::size_t i, double beta,
                       BellmanFault fault = BellmanFault::none);

struct EvaluationResult {
  TabularQ q;
  std::size_t iterations = 0;
};

/// Iterates the operator from `q0` (zeros when empty) until successive
/// iterates differ by less than `tol` in sup-norm. Throws std::runtime_error
/// after `max_iterations`.
EvaluationResult variational_policy_evaluation(const MarkovGame& game, const LatentTabularPolicy& policy,
                                               const VariationalTables& q, std::size_t i, double beta, double tol,
                                               const TabularQ& q0 = {}, std::size_t max_iterations = 1000000,
                                               BellmanFault fault = BellmanFault::none);

/// Fixed point by dense LU on (I - gamma P Pi) Q = r + gamma P Pi b.
TabularQ solve_policy_evaluation(const MarkovGame& game, const LatentTabularPolicy& policy,
                                 const VariationalTables& q, std::size_t i, double beta);

/// Value of the improvement objective at state s:
/// E_{z, a}[Q(s,a) - beta log pi~^i(a^i|s) + (beta/N) sum_j log q^(i,j)].
double improvement_objective(const MarkovGame& game, const LatentTabularPolicy& policy, const VariationalTables& q,
                             const TabularQ& q_values, std::size_t i, double beta, std::size_t s);

struct Improvement {
  LatentTabularPolicy policy;
  VariationalTables q;
};

/// Maximizes the improvement objective for agent i, state by state, over
/// every deterministic z-conditioned row plus the incumbent row, with q set
/// to the conditionals induced by each candidate. Other agents stay fixed.
Improvement improve_policy(const MarkovGame& game, const LatentTabularPolicy& policy_old,
                           const TabularQ& q_old, std::size_t i, double beta);

struct ImprovementReport {
  bool improved = true;
  /// max over (s, a) of Q_old - Q_new, clipped at zero.
  double max_violation = 0.0;
  TabularQ q_new;
};

ImprovementReport improvement_check(const MarkovGame& game, const TabularQ& q_old,
                                    const LatentTabularPolicy& policy_new, const VariationalTables& q_new,
                                    std::size_t i, double beta, double tolerance = 1e-9);

double sup_norm_diff(const TabularQ& a, const TabularQ& b);

MarkovGame random_game(std::mt19937_64& rng, std::size_t n_states, const std::vector<std::size_t>& n_actions,
                       double gamma);
LatentTabularPolicy random_policy(std::mt19937_64& rng, std::size_t n_states,
                                  const std::vector<std::size_t>& n_actions, std::size_t n_latent);
VariationalTables random_variational(std::mt19937_64& rng, std::size_t n_states,
                                     const std::vector<std::size_t>& n_actions);

struct SuiteConfig {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  std::size_t max_states = 5;
  std::size_t max_actions = 3;
  std::size_t n_agents = 2;
  std::size_t n_latent = 2;
  double gamma = 0.9;
  double beta = 0.3;
  double tol = 1e-10;
  BellmanFault fault = BellmanFault::none;
};

struct SuiteCheck {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  std::size_t failures = 0;
  /// Largest observed quantity relevant to the check (ratio, error or violation).
  double worst = 0.0;
  std::string detail;
};

struct SuiteReport {
  std::vector<SuiteCheck> checks;
  bool passed() const;
  const SuiteCheck& get(const std::string& name) const;
};

/// Runs every tabular property over `trials` random games and policies.
SuiteReport run_suite(const SuiteConfig& config);

}  // namespace vm3ac::tabular
