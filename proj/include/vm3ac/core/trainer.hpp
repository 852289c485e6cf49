#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vm3ac/autodiff/adam.hpp"
#include "vm3ac/autodiff/checkpoint.hpp"
#include "vm3ac/autodiff/mlp.hpp"
#include "vm3ac/distributions/distributions.hpp"
#include "vm3ac/envs/environment.hpp"

namespace vm3ac::core {

using ad::Tensor;

enum class Variant { vm3ac, ma_sac, ma_ac };
enum class ExecutionMode { mean_z, shared_seed_z };

std::string to_string(Variant v);
std::string to_string(ExecutionMode m);
Variant variant_from_string(const std::string& name);
ExecutionMode mode_from_string(const std::string& name);

struct TrainerConfig {
  Variant variant = Variant::vm3ac;
  /// Unset means the per-environment default (see default_beta_dim_z).
  std::optional<double> beta;
  std::optional<std::size_t> dim_z;
  double gamma = 0.99;
  double tau = 0.005;
  double learning_rate = 3e-4;
  std::size_t batch_size = 128;
  std::size_t buffer_capacity = 500000;
  std::vector<std::size_t> hidden = {128, 128};
  double q_sigma = 0.2;
  /// One shared variational network with a one-hot target selector, or one
  /// network per target agent.
  bool shared_variational = true;
  std::size_t warmup = 1000;
  /// Gradient steps per collected environment step.
  double updates_per_step = 1.0;
  std::size_t total_env_steps = 200000;
  /// Deterministic evaluation every this many env steps (0 = only at the end).
  std::size_t eval_interval = 0;
  std::size_t eval_episodes = 20;
  ExecutionMode eval_mode = ExecutionMode::mean_z;
  bool log_wall_time = false;
};

/// beta and dim(z) for VM3-AC on a given environment and agent count.
std::pair<double, std::size_t> default_beta_dim_z(envs::EnvKind kind, std::size_t n_agents);

/// beta and dim(z) after defaults and variant rules are applied: MA_AC has
/// beta = 0 and dim_z = 0; MA_SAC keeps beta and has dim_z = 0.
struct Resolved {
  double beta = 0.0;
  std::size_t dim_z = 0;
  bool uses_variational = false;
};
Resolved resolve(const TrainerConfig& config, envs::EnvKind kind, std::size_t n_agents);

nlohmann::json to_json(const TrainerConfig& config);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dimensions shared by every agent's networks.
struct ModelDims {
  std::size_t n_agents = 0;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::size_t dim_z = 0;
  std::vector<std::size_t> hidden;
  bool uses_variational = false;
  bool shared_variational = true;
};

/// One agent's parameters: policy, twin critics, value, target value and
/// the variational mean network(s).
struct AgentModules {
  ad::Mlp policy;
  ad::Mlp q1;
  ad::Mlp q2;
  ad::Mlp value;
  ad::Mlp value_target;
  std::vector<ad::Mlp> xi;

  AgentModules() = default;
  AgentModules(const ModelDims& dims, std::mt19937_64& rng);

  ad::ParamList policy_params();
  ad::ParamList critic_params();
  ad::ParamList value_params();
  ad::ParamList target_params();
  void collect(const std::string& prefix, ad::ParamList& out);
};

/// Policy distribution pi(.|o, z) for a batch; o is [B, obs], z is [B, dim_z].
dist::SquashedGaussian policy_distribution(const AgentModules& agent, const Tensor& obs, const Tensor& z,
                                           ad::Tape* tape = nullptr);

/// Variational q of agent `owner`: mean network over (a_given, o_i, o_j, target).
dist::VariationalGaussian variational(const AgentModules& agent, const ModelDims& dims, double sigma);

/// Single-agent action. Deterministic mode returns tanh(mean); otherwise
/// `noise` ([1, act]) is used for the reparameterized sample.
std::vector<double> act(const AgentModules& agent, const std::vector<double>& obs, const std::vector<double>& z,
                        bool deterministic, const std::vector<double>& noise = {});

struct Transition {
  std::vector<double> x;
  std::vector<double> actions;
  double reward = 0.0;
  std::vector<double> next_x;
  bool done = false;
};

/// Minibatch in tensor form. obs[k] is agent k's slice of x.
struct Batch {
  Tensor x;
  Tensor next_x;
  std::vector<Tensor> obs;
  Tensor actions;
  Tensor reward;
  Tensor done;
  std::size_t size() const { return x.rows(); }
};

Batch make_batch(const std::vector<Transition>& transitions, std::size_t n_agents, std::size_t obs_dim);

/// Fixed-capacity ring buffer; sampling is uniform without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t k) const { return items_.at(k); }
  std::vector<std::size_t> sample_indices(std::size_t count, std::mt19937_64& rng) const;
  std::vector<Transition> sample(std::size_t count, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> items_;
};

/// Randomness consumed by one gradient step: one latent row per transition
/// shared by all agents, and one standard-normal action noise per agent.
struct UpdateNoise {
  Tensor z;
  std::vector<Tensor> eps;
};

UpdateNoise sample_update_noise(std::size_t batch, std::size_t n_agents, std::size_t act_dim, std::size_t dim_z,
                                std::mt19937_64& rng);

/// Reparameterized joint sample at x_t: actions[k] and log pi^k, no tape.
struct JointSample {
  std::vector<Tensor> actions;
  std::vector<Tensor> log_probs;
};

struct LossContext {
  ModelDims dims;
  double beta = 0.0;
  double gamma = 0.99;
  double q_sigma = 0.2;
};

JointSample sample_joint(const std::vector<AgentModules>& agents, const Batch& batch, const UpdateNoise& noise);

/// min(Q1, Q2) - beta log pi^i + (beta/N) sum_{j != i} log q^(i,j), shape [B, 1].
Tensor value_target(const std::vector<AgentModules>& agents, std::size_t i, const Batch& batch,
                    const JointSample& sample, const UpdateNoise& noise, const LossContext& ctx);

/// mean 1/2 (V(x) - target)^2.
Tensor value_loss(const AgentModules& agent, const Batch& batch, const Tensor& target, ad::Tape* tape);

/// r + gamma (1 - done) V_target(x').
Tensor q_target(const AgentModules& agent, const Batch& batch, double gamma);

/// Sum over both critics of mean 1/2 (Q(x, a) - target)^2.
Tensor q_loss(const AgentModules& agent, const Batch& batch, const Tensor& target, ad::Tape* tape);

/// mean[-Q1(x, a) + beta log pi^i - (beta/N) sum_j log q^(i,j)] with agent
/// i's action re-sampled on the tape and every other action held fixed.
Tensor policy_loss(const std::vector<AgentModules>& agents, std::size_t i, const Batch& batch,
                   const JointSample& sample, const UpdateNoise& noise, const LossContext& ctx, ad::Tape* tape);

/// psi_bar <- (1 - tau) psi_bar + tau psi.
void update_targets(AgentModules& agent, double tau);

struct UpdateStats {
  std::vector<double> value_loss;
  std::vector<double> q_loss;
  std::vector<double> policy_loss;
  double mean_value_loss() const;
  double mean_q_loss() const;
  double mean_policy_loss() const;
};

/// All networks and optimizers of a run.
class Learner {
 public:
  Learner(const ModelDims& dims, const TrainerConfig& config, double beta, std::mt19937_64& init_rng);

  const ModelDims& dims() const { return dims_; }
  const LossContext& context() const { return ctx_; }
  std::vector<AgentModules>& agents() { return agents_; }
  const std::vector<AgentModules>& agents() const { return agents_; }

  /// Critics and values first, then policies and variational nets, then
  /// target values. Throws TrainingError on any non-finite loss or gradient.
  UpdateStats update(const Batch& batch, const UpdateNoise& noise, std::size_t step_index = 0);

  ad::ParamList params();
  ad::Checkpoint checkpoint();

 private:
  struct Optimizers {
    ad::AdamState critic;
    ad::AdamState value;
    ad::AdamState policy;
  };

  ModelDims dims_;
  LossContext ctx_;
  double tau_;
  std::vector<AgentModules> agents_;
  std::vector<Optimizers> optimizers_;
};

/// Stream-separated generator: same seed, different stream, independent sequence.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

struct EvalResult {
  ExecutionMode mode = ExecutionMode::mean_z;
  std::size_t episodes = 0;
  std::vector<double> episode_returns;
  std::vector<double> per_agent_return;
  double mean_return = 0.0;
};

/// Deterministic (mean-network) evaluation. Episode k resets the
/// environment with seed + k; in shared_seed_z mode every agent owns a
/// generator seeded with `seed`.
EvalResult evaluate(const std::vector<AgentModules>& agents, const ModelDims& dims, envs::Environment& env,
                    ExecutionMode mode, std::size_t episodes, std::uint64_t seed);

/// Loads networks from a checkpoint written by train_run and evaluates them.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, envs::Environment& env, ExecutionMode mode,
                               std::size_t episodes, std::uint64_t seed);

nlohmann::json to_json(const EvalResult& r);

struct EpisodeRecord {
  std::size_t episode = 0;
  std::size_t env_step = 0;
  double episode_return = 0.0;
  double value_loss = 0.0;
  double q_loss = 0.0;
  double policy_loss = 0.0;
  std::size_t gradient_steps = 0;
  double wall_ms = 0.0;
};

struct RunOutputs {
  std::filesystem::path metrics_csv;
  std::filesystem::path metrics_jsonl;
  std::filesystem::path checkpoint;
  std::string run_id;
  /// Embedded in the first JSONL record; the trainer config is used when null.
  nlohmann::json config;
};

struct RunResult {
  std::vector<EpisodeRecord> episodes;
  std::vector<std::pair<std::size_t, EvalResult>> evaluations;
  EvalResult final_mean_z;
  EvalResult final_shared_seed_z;
  std::size_t gradient_steps = 0;
};

inline constexpr int kMetricsFormatVersion = 1;

/// Centralized training loop: collect an episode with one shared z per
/// step, then run the scheduled gradient steps.
RunResult train_run(const TrainerConfig& config, const envs::EnvironmentConfig& env_config, std::uint64_t seed,
                    const RunOutputs* outputs = nullptr);

/// Returns of the untrained stochastic policies under the same seeds and
/// generator streams as train_run, without any training machinery.
std::vector<double> rollout_baseline(const TrainerConfig& config, const envs::EnvironmentConfig& env_config,
                                     std::uint64_t seed);

}  // namespace vm3ac::core
