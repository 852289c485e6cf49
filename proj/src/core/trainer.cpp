#include "vm3ac/core/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "vm3ac/autodiff/tape.hpp"

namespace vm3ac::core {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Tensor row_tensor(const std::vector<double>& v) { return Tensor({1, v.size()}, v); }

Tensor concat_all(const std::vector<Tensor>& parts) {
  std::vector<Tensor> nonempty;
  for (const auto& p : parts) {
    if (p.cols() > 0) nonempty.push_back(p);
  }
  if (nonempty.size() == 1) return nonempty.front();
  return ad::concat_cols(nonempty);
}

Tensor one_hot(std::size_t rows, std::size_t width, std::size_t index) {
  Tensor t = Tensor::zeros({rows, width});
  for (std::size_t r = 0; r < rows; ++r) t[r * width + index] = 1.0;
  return t;
}

// Elementwise minimum of two [B, 1] value tensors (no gradient).
Tensor min_values(const Tensor& a, const Tensor& b) {
  Tensor out = a.detach();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::min(a[k], b[k]);
  return out;
}

void require_finite(double value, const std::string& what, std::size_t agent, std::size_t step) {
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite " + what + " for agent " + std::to_string(agent) + " at gradient step " +
                        std::to_string(step));
  }
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vm3ac: return "vm3ac";
    case Variant::ma_sac: return "ma_sac";
    case Variant::ma_ac: return "ma_ac";
  }
  return "unknown";
}

std::string to_string(ExecutionMode m) { return m == ExecutionMode::mean_z ? "mean_z" : "shared_seed_z"; }

Variant variant_from_string(const std::string& name) {
  if (name == "vm3ac") return Variant::vm3ac;
  if (name == "ma_sac") return Variant::ma_sac;
  if (name == "ma_ac") return Variant::ma_ac;
  throw std::invalid_argument("unknown variant '" + name + "' (expected vm3ac, ma_sac or ma_ac)");
}

ExecutionMode mode_from_string(const std::string& name) {
  if (name == "mean_z") return ExecutionMode::mean_z;
  if (name == "shared_seed_z") return ExecutionMode::shared_seed_z;
  throw std::invalid_argument("unknown execution mode '" + name + "' (expected mean_z or shared_seed_z)");
}

std::pair<double, std::size_t> default_beta_dim_z(envs::EnvKind kind, std::size_t n_agents) {
  if (kind == envs::EnvKind::predator_prey) {
    if (n_agents == 3) return {0.1, 8};
    if (n_agents >= 4) return {0.2, 8};
    return {0.15, 8};
  }
  return {0.1, 8};
}

Resolved resolve(const TrainerConfig& config, envs::EnvKind kind, std::size_t n_agents) {
  const auto [beta, dim_z] = default_beta_dim_z(kind, n_agents);
  Resolved r;
  r.beta = config.beta.value_or(beta);
  r.dim_z = config.dim_z.value_or(dim_z);
  switch (config.variant) {
    case Variant::vm3ac: r.uses_variational = n_agents > 1; break;
    case Variant::ma_sac: r.dim_z = 0; break;
    case Variant::ma_ac:
      r.beta = 0.0;
      r.dim_z = 0;
      break;
  }
  if (r.beta < 0.0) throw std::invalid_argument("beta must be non-negative");
  return r;
}

nlohmann::json to_json(const TrainerConfig& c) {
  nlohmann::json j;
  j["variant"] = to_string(c.variant);
  j["beta"] = c.beta ? nlohmann::json(*c.beta) : nlohmann::json(nullptr);
  j["dim_z"] = c.dim_z ? nlohmann::json(*c.dim_z) : nlohmann::json(nullptr);
  j["gamma"] = c.gamma;
  j["tau"] = c.tau;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["buffer_capacity"] = c.buffer_capacity;
  j["hidden"] = c.hidden;
  j["q_sigma"] = c.q_sigma;
  j["shared_variational"] = c.shared_variational;
  j["warmup"] = c.warmup;
  j["updates_per_step"] = c.updates_per_step;
  j["total_env_steps"] = c.total_env_steps;
  j["eval_interval"] = c.eval_interval;
  j["eval_episodes"] = c.eval_episodes;
  j["eval_mode"] = to_string(c.eval_mode);
  j["log_wall_time"] = c.log_wall_time;
  return j;
}

// ------------------------------------------------------------ networks

AgentModules::AgentModules(const ModelDims& d, std::mt19937_64& rng)
    : policy(d.obs_dim + d.dim_z, d.hidden, 2 * d.act_dim, rng),
      q1(d.n_agents * (d.obs_dim + d.act_dim), d.hidden, 1, rng),
      q2(d.n_agents * (d.obs_dim + d.act_dim), d.hidden, 1, rng),
      value(d.n_agents * d.obs_dim, d.hidden, 1, rng),
      value_target(value) {
  if (d.uses_variational) {
    const std::size_t base = d.act_dim + 2 * d.obs_dim;
    if (d.shared_variational) {
      xi.emplace_back(base + d.n_agents, d.hidden, d.act_dim, rng);
    } else {
      for (std::size_t k = 0; k < d.n_agents; ++k) xi.emplace_back(base, d.hidden, d.act_dim, rng);
    }
  }
}

ad::ParamList AgentModules::policy_params() {
  ad::ParamList out;
  policy.collect("policy", out);
  for (std::size_t k = 0; k < xi.size(); ++k) xi[k].collect("xi" + std::to_string(k), out);
  return out;
}

ad::ParamList AgentModules::critic_params() {
  ad::ParamList out;
  q1.collect("q1", out);
  q2.collect("q2", out);
  return out;
}

ad::ParamList AgentModules::value_params() {
  ad::ParamList out;
  value.collect("value", out);
  return out;
}

ad::ParamList AgentModules::target_params() {
  ad::ParamList out;
  value_target.collect("value_target", out);
  return out;
}

void AgentModules::collect(const std::string& prefix, ad::ParamList& out) {
  policy.collect(prefix + "/policy", out);
  q1.collect(prefix + "/q1", out);
  q2.collect(prefix + "/q2", out);
  value.collect(prefix + "/value", out);
  value_target.collect(prefix + "/value_target", out);
  for (std::size_t k = 0; k < xi.size(); ++k) xi[k].collect(prefix + "/xi" + std::to_string(k), out);
}

dist::SquashedGaussian policy_distribution(const AgentModules& agent, const Tensor& obs, const Tensor& z,
                                           ad::Tape* tape) {
  const std::size_t act_dim = agent.policy.out_dim() / 2;
  if (obs.cols() + z.cols() != agent.policy.in_dim()) {
    throw std::invalid_argument("policy: expected obs + z width " + std::to_string(agent.policy.in_dim()) +
                                ", got " + std::to_string(obs.cols()) + " + " + std::to_string(z.cols()));
  }
  const Tensor out = agent.policy.forward(concat_all({obs, z}), tape);
  return {dist::DiagGaussian::from_raw(ad::slice_cols(out, 0, act_dim), ad::slice_cols(out, act_dim, 2 * act_dim))};
}

dist::VariationalGaussian variational(const AgentModules& agent, const ModelDims& dims, double sigma) {
  dist::VariationalGaussian q;
  q.sigma = sigma;
  q.mean_fn = [&agent, dims](const Tensor& given, const Tensor& o_i, const Tensor& o_j, std::size_t target,
                             ad::Tape* tape) {
    if (dims.shared_variational) {
      const Tensor input = concat_all({given, o_i, o_j, one_hot(given.rows(), dims.n_agents, target)});
      return agent.xi.at(0).forward(input, tape);
    }
    return agent.xi.at(target).forward(concat_all({given, o_i, o_j}), tape);
  };
  return q;
}

std::vector<double> act(const AgentModules& agent, const std::vector<double>& obs, const std::vector<double>& z,
                        bool deterministic, const std::vector<double>& noise) {
  const auto d = policy_distribution(agent, row_tensor(obs), Tensor({1, z.size()}, z));
  if (deterministic) return d.mode().values();
  if (noise.size() != d.base.dim()) {
    throw std::invalid_argument("act: noise has " + std::to_string(noise.size()) + " components, expected " +
                                std::to_string(d.base.dim()));
  }
  return d.sample(row_tensor(noise)).action.values();
}

// ------------------------------------------------------------ replay

Batch make_batch(const std::vector<Transition>& transitions, std::size_t n_agents, std::size_t obs_dim) {
  if (transitions.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t b = transitions.size();
  const std::size_t xw = transitions[0].x.size(), aw = transitions[0].actions.size();
  if (xw != n_agents * obs_dim) throw std::invalid_argument("make_batch: observation width mismatch");
  Batch out;
  out.x = Tensor::zeros({b, xw});
  out.next_x = Tensor::zeros({b, xw});
  out.actions = Tensor::zeros({b, aw});
  out.reward = Tensor::zeros({b, 1});
  out.done = Tensor::zeros({b, 1});
  for (std::size_t r = 0; r < b; ++r) {
    const auto& t = transitions[r];
    std::copy(t.x.begin(), t.x.end(), out.x.data().begin() + static_cast<std::ptrdiff_t>(r * xw));
    std::copy(t.next_x.begin(), t.next_x.end(), out.next_x.data().begin() + static_cast<std::ptrdiff_t>(r * xw));
    std::copy(t.actions.begin(), t.actions.end(), out.actions.data().begin() + static_cast<std::ptrdiff_t>(r * aw));
    out.reward[r] = t.reward;
    out.done[r] = t.done ? 1.0 : 0.0;
  }
  for (std::size_t k = 0; k < n_agents; ++k) out.obs.push_back(ad::slice_cols(out.x, k * obs_dim, (k + 1) * obs_dim));
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count, std::mt19937_64& rng) const {
  const std::size_t n = items_.size();
  if (count > n) {
    throw std::invalid_argument("replay buffer: cannot draw " + std::to_string(count) + " distinct items from " +
                                std::to_string(n));
  }
  // Floyd's algorithm: `count` distinct indices in O(count).
  std::vector<std::size_t> picked;
  std::unordered_set<std::size_t> seen;
  picked.reserve(count);
  for (std::size_t j = n - count; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> u(0, j);
    std::size_t t = u(rng);
    if (seen.count(t)) t = j;
    seen.insert(t);
    picked.push_back(t);
  }
  return picked;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  std::vector<Transition> out;
  for (std::size_t k : sample_indices(count, rng)) out.push_back(items_[k]);
  return out;
}

// ------------------------------------------------------------ losses

UpdateNoise sample_update_noise(std::size_t batch, std::size_t n_agents, std::size_t act_dim, std::size_t dim_z,
                                std::mt19937_64& rng) {
  UpdateNoise n;
  n.z = dist::standard_normal({batch, dim_z}, rng);
  for (std::size_t k = 0; k < n_agents; ++k) n.eps.push_back(dist::standard_normal({batch, act_dim}, rng));
  return n;
}

JointSample sample_joint(const std::vector<AgentModules>& agents, const Batch& batch, const UpdateNoise& noise) {
  JointSample s;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    const auto d = policy_distribution(agents[k], batch.obs[k], noise.z);
    const auto draw = d.sample(noise.eps.at(k));
    s.actions.push_back(draw.action);
    s.log_probs.push_back(d.log_prob_pre_squash(draw.pre_squash));
  }
  return s;
}

Tensor value_target(const std::vector<AgentModules>& agents, std::size_t i, const Batch& batch,
                    const JointSample& sample, const UpdateNoise&, const LossContext& ctx) {
  const auto& agent = agents.at(i);
  std::vector<Tensor> parts{batch.x};
  parts.insert(parts.end(), sample.actions.begin(), sample.actions.end());
  const Tensor xa = concat_all(parts);
  Tensor v = min_values(agent.q1.forward(xa), agent.q2.forward(xa));
  if (ctx.beta == 0.0) return v;
  v = v - ad::scale(sample.log_probs[i], ctx.beta);
  if (ctx.dims.uses_variational) {
    const auto q = variational(agent, ctx.dims, ctx.q_sigma);
    const double w = ctx.beta / static_cast<double>(agents.size());
    for (std::size_t j = 0; j < agents.size(); ++j) {
      if (j == i) continue;
      const auto pair =
          dist::paired_log_q(q, sample.actions[i], sample.actions[j], batch.obs[i], batch.obs[j], i, j, nullptr);
      v = v + ad::scale(pair.total(), w);
    }
  }
  return v;
}

Tensor value_loss(const AgentModules& agent, const Batch& batch, const Tensor& target, ad::Tape* tape) {
  const Tensor diff = agent.value.forward(batch.x, tape) - target.detach();
  return ad::scale(ad::mean(ad::square(diff)), 0.5);
}

Tensor q_target(const AgentModules& agent, const Batch& batch, double gamma) {
  const Tensor next_v = agent.value_target.forward(batch.next_x);
  const Tensor not_done = ad::add_scalar(ad::scale(batch.done, -1.0), 1.0);
  return batch.reward + ad::scale(not_done * next_v, gamma);
}

Tensor q_loss(const AgentModules& agent, const Batch& batch, const Tensor& target, ad::Tape* tape) {
  const Tensor xa = concat_all({batch.x, batch.actions});
  const Tensor t = target.detach();
  const Tensor l1 = ad::scale(ad::mean(ad::square(agent.q1.forward(xa, tape) - t)), 0.5);
  const Tensor l2 = ad::scale(ad::mean(ad::square(agent.q2.forward(xa, tape) - t)), 0.5);
  return l1 + l2;
}

Tensor policy_loss(const std::vector<AgentModules>& agents, std::size_t i, const Batch& batch,
                   const JointSample& sample, const UpdateNoise& noise, const LossContext& ctx, ad::Tape* tape) {
  const auto& agent = agents.at(i);
  const auto d = policy_distribution(agent, batch.obs[i], noise.z, tape);
  const auto draw = d.sample(noise.eps.at(i));
  std::vector<Tensor> parts{batch.x};
  for (std::size_t k = 0; k < agents.size(); ++k) parts.push_back(k == i ? draw.action : sample.actions[k].detach());
  Tensor terms = ad::scale(agent.q1.forward(concat_all(parts)), -1.0);
  if (ctx.beta != 0.0) {
    terms = terms + ad::scale(d.log_prob_pre_squash(draw.pre_squash), ctx.beta);
    if (ctx.dims.uses_variational) {
      const auto q = variational(agent, ctx.dims, ctx.q_sigma);
      const double w = ctx.beta / static_cast<double>(agents.size());
      for (std::size_t j = 0; j < agents.size(); ++j) {
        if (j == i) continue;
        const auto pair = dist::paired_log_q(q, draw.action, sample.actions[j].detach(), batch.obs[i], batch.obs[j],
                                             i, j, tape);
        terms = terms - ad::scale(pair.total(), w);
      }
    }
  }
  return ad::mean(terms);
}

void update_targets(AgentModules& agent, double tau) {
  auto src = agent.value_params();
  auto dst = agent.target_params();
  for (std::size_t k = 0; k < src.size(); ++k) {
    auto from = src[k].tensor->data();
    auto to = dst[k].tensor->data();
    for (std::size_t e = 0; e < to.size(); ++e) to[e] = (1.0 - tau) * to[e] + tau * from[e];
  }
}

double UpdateStats::mean_value_loss() const {
  return std::accumulate(value_loss.begin(), value_loss.end(), 0.0) / static_cast<double>(value_loss.size());
}
double UpdateStats::mean_q_loss() const {
  return std::accumulate(q_loss.begin(), q_loss.end(), 0.0) / static_cast<double>(q_loss.size());
}
double UpdateStats::mean_policy_loss() const {
  return std::accumulate(policy_loss.begin(), policy_loss.end(), 0.0) / static_cast<double>(policy_loss.size());
}

// ------------------------------------------------------------ learner

Learner::Learner(const ModelDims& dims, const TrainerConfig& config, double beta, std::mt19937_64& init_rng)
    : dims_(dims), tau_(config.tau) {
  ctx_.dims = dims;
  ctx_.beta = beta;
  ctx_.gamma = config.gamma;
  ctx_.q_sigma = config.q_sigma;
  ad::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  for (std::size_t k = 0; k < dims.n_agents; ++k) agents_.emplace_back(dims, init_rng);
  for (auto& a : agents_) {
    optimizers_.push_back({ad::AdamState::for_params(a.critic_params(), adam),
                           ad::AdamState::for_params(a.value_params(), adam),
                           ad::AdamState::for_params(a.policy_params(), adam)});
  }
}

UpdateStats Learner::update(const Batch& batch, const UpdateNoise& noise, std::size_t step_index) {
  const std::size_t n = agents_.size();
  UpdateStats stats;
  const JointSample sample = sample_joint(agents_, batch, noise);

  std::vector<ad::Gradients> value_grads(n), critic_grads(n), policy_grads(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor v_hat = value_target(agents_, i, batch, sample, noise, ctx_);
    const Tensor q_hat = q_target(agents_[i], batch, ctx_.gamma);
    {
      ad::Tape tape;
      const Tensor loss = value_loss(agents_[i], batch, v_hat, &tape);
      require_finite(loss.item(), "value_loss", i, step_index);
      stats.value_loss.push_back(loss.item());
      value_grads[i] = tape.backward(loss);
    }
    {
      ad::Tape tape;
      const Tensor loss = q_loss(agents_[i], batch, q_hat, &tape);
      require_finite(loss.item(), "q_loss", i, step_index);
      stats.q_loss.push_back(loss.item());
      critic_grads[i] = tape.backward(loss);
    }
  }
  try {
    for (std::size_t i = 0; i < n; ++i) {
      ad::adam_step(agents_[i].value_params(), value_grads[i], optimizers_[i].value);
      ad::adam_step(agents_[i].critic_params(), critic_grads[i], optimizers_[i].critic);
    }
    for (std::size_t i = 0; i < n; ++i) {
      ad::Tape tape;
      const Tensor loss = policy_loss(agents_, i, batch, sample, noise, ctx_, &tape);
      require_finite(loss.item(), "policy_loss", i, step_index);
      stats.policy_loss.push_back(loss.item());
      policy_grads[i] = tape.backward(loss);
    }
    for (std::size_t i = 0; i < n; ++i) {
      ad::adam_step(agents_[i].policy_params(), policy_grads[i], optimizers_[i].policy);
    }
  } catch (const std::domain_error& e) {
    throw TrainingError(std::string(e.what()) + " at gradient step " + std::to_string(step_index));
  }
  for (auto& a : agents_) update_targets(a, tau_);
  return stats;
}

ad::ParamList Learner::params() {
  ad::ParamList out;
  for (std::size_t k = 0; k < agents_.size(); ++k) agents_[k].collect("agent" + std::to_string(k), out);
  return out;
}

ad::Checkpoint Learner::checkpoint() {
  ad::Checkpoint c = ad::Checkpoint::from_params(params());
  c.meta["n_agents"] = std::to_string(dims_.n_agents);
  c.meta["obs_dim"] = std::to_string(dims_.obs_dim);
  c.meta["act_dim"] = std::to_string(dims_.act_dim);
  c.meta["dim_z"] = std::to_string(dims_.dim_z);
  c.meta["hidden"] = join_sizes(dims_.hidden);
  c.meta["uses_variational"] = dims_.uses_variational ? "1" : "0";
  c.meta["shared_variational"] = dims_.shared_variational ? "1" : "0";
  return c;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// ------------------------------------------------------------ evaluation

EvalResult evaluate(const std::vector<AgentModules>& agents, const ModelDims& dims, envs::Environment& env,
                    ExecutionMode mode, std::size_t episodes, std::uint64_t seed) {
  const auto spec = env.spec();
  if (spec.n_agents != dims.n_agents || spec.obs_dim != dims.obs_dim || spec.act_dim != dims.act_dim) {
    throw std::invalid_argument("evaluate: networks expect n_agents=" + std::to_string(dims.n_agents) +
                                " obs_dim=" + std::to_string(dims.obs_dim) + " act_dim=" +
                                std::to_string(dims.act_dim) + ", environment " + env.id() + " has n_agents=" +
                                std::to_string(spec.n_agents) + " obs_dim=" + std::to_string(spec.obs_dim) +
                                " act_dim=" + std::to_string(spec.act_dim));
  }
  if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be at least 1");
  EvalResult result;
  result.mode = mode;
  result.episodes = episodes;

  // Each agent holds its own generator; with a common seed they produce the
  // same latent sequence without communicating.
  std::vector<std::mt19937_64> generators(dims.n_agents, std::mt19937_64(seed));
  std::normal_distribution<double> normal;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto obs = env.reset(seed + e);
    double total = 0.0;
    bool done = false;
    while (!done) {
      envs::JointAction joint;
      for (std::size_t k = 0; k < dims.n_agents; ++k) {
        std::vector<double> z(dims.dim_z, 0.0);
        if (mode == ExecutionMode::shared_seed_z) {
          for (auto& v : z) v = normal(generators[k]);
          normal.reset();
        }
        joint.push_back(act(agents[k], obs[k], z, true));
      }
      auto step = env.step(joint);
      total += step.reward;
      done = step.done;
      obs = std::move(step.observations);
    }
    result.episode_returns.push_back(total);
  }
  result.mean_return = std::accumulate(result.episode_returns.begin(), result.episode_returns.end(), 0.0) /
                       static_cast<double>(episodes);
  result.per_agent_return.assign(dims.n_agents, result.mean_return);
  return result;
}

EvalResult evaluate_checkpoint(const std::filesystem::path& path, envs::Environment& env, ExecutionMode mode,
                               std::size_t episodes, std::uint64_t seed) {
  const ad::Checkpoint ckpt = ad::read_checkpoint(path);
  auto meta = [&](const std::string& key) {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw std::runtime_error(path.string() + ": checkpoint lacks meta '" + key + "'");
    return it->second;
  };
  ModelDims dims;
  dims.n_agents = std::stoul(meta("n_agents"));
  dims.obs_dim = std::stoul(meta("obs_dim"));
  dims.act_dim = std::stoul(meta("act_dim"));
  dims.dim_z = std::stoul(meta("dim_z"));
  dims.hidden = split_sizes(meta("hidden"));
  dims.uses_variational = meta("uses_variational") == "1";
  dims.shared_variational = meta("shared_variational") == "1";
  const auto spec = env.spec();
  if (spec.n_agents != dims.n_agents || spec.obs_dim != dims.obs_dim || spec.act_dim != dims.act_dim) {
    throw std::invalid_argument("checkpoint " + path.string() + " expects n_agents=" + std::to_string(dims.n_agents) +
                                " obs_dim=" + std::to_string(dims.obs_dim) + " act_dim=" +
                                std::to_string(dims.act_dim) + ", found n_agents=" + std::to_string(spec.n_agents) +
                                " obs_dim=" + std::to_string(spec.obs_dim) + " act_dim=" +
                                std::to_string(spec.act_dim) + " in environment " + env.id());
  }
  std::mt19937_64 rng(0);
  std::vector<AgentModules> agents;
  ad::ParamList params;
  for (std::size_t k = 0; k < dims.n_agents; ++k) agents.emplace_back(dims, rng);
  for (std::size_t k = 0; k < dims.n_agents; ++k) agents[k].collect("agent" + std::to_string(k), params);
  ckpt.load_into(params);
  return evaluate(agents, dims, env, mode, episodes, seed);
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j;
  j["mode"] = to_string(r.mode);
  j["episodes"] = r.episodes;
  j["mean_return"] = r.mean_return;
  j["per_agent_return"] = r.per_agent_return;
  j["episode_returns"] = r.episode_returns;
  return j;
}

// ------------------------------------------------------------ training

namespace {

std::vector<double> flatten(const envs::JointObservation& obs) {
  std::vector<double> out;
  for (const auto& o : obs) out.insert(out.end(), o.begin(), o.end());
  return out;
}

struct RunSetup {
  envs::EnvSpec spec;
  Resolved resolved;
  ModelDims dims;
};

RunSetup setup(const TrainerConfig& config, const envs::EnvironmentConfig& env_config) {
  RunSetup s;
  s.spec = envs::observation_spec(env_config);
  s.resolved = resolve(config, env_config.kind, s.spec.n_agents);
  s.dims.n_agents = s.spec.n_agents;
  s.dims.obs_dim = s.spec.obs_dim;
  s.dims.act_dim = s.spec.act_dim;
  s.dims.dim_z = s.resolved.dim_z;
  s.dims.hidden = config.hidden;
  s.dims.uses_variational = s.resolved.uses_variational;
  s.dims.shared_variational = config.shared_variational;
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (config.updates_per_step < 0.0) throw std::invalid_argument("updates_per_step must be non-negative");
  if (!(config.q_sigma > 0.0)) throw std::invalid_argument("q_sigma must be positive");
  if (config.tau < 0.0 || config.tau > 1.0) throw std::invalid_argument("tau must lie in [0, 1]");
  return s;
}

// One training-time joint action: a fresh z shared by every agent, then a
// per-agent reparameterization noise, all from `act_rng`.
envs::JointAction collect_action(const std::vector<AgentModules>& agents, const ModelDims& dims,
                                 const envs::JointObservation& obs, std::mt19937_64& act_rng) {
  const Tensor z = dist::standard_normal({1, dims.dim_z}, act_rng);
  envs::JointAction joint;
  for (std::size_t k = 0; k < dims.n_agents; ++k) {
    const Tensor eps = dist::standard_normal({1, dims.act_dim}, act_rng);
    joint.push_back(act(agents[k], obs[k], z.values(), false, eps.values()));
  }
  return joint;
}

class MetricsSink {
 public:
  MetricsSink(const RunOutputs* outputs, const TrainerConfig& config, std::uint64_t seed) : outputs_(outputs) {
    if (!outputs_) return;
    for (const auto& p : {outputs_->metrics_csv, outputs_->metrics_jsonl, outputs_->checkpoint}) {
      if (!p.empty() && p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    }
    if (!outputs_->metrics_csv.empty()) {
      csv_.open(outputs_->metrics_csv);
      if (!csv_) throw std::runtime_error("cannot write " + outputs_->metrics_csv.string());
      csv_ << "# vm3ac-metrics format_version " << kMetricsFormatVersion << "\n";
      csv_ << "run_id,episode,env_step,mean_return,value_loss,q_loss,policy_loss,wall_ms\n";
    }
    if (!outputs_->metrics_jsonl.empty()) {
      jsonl_.open(outputs_->metrics_jsonl);
      if (!jsonl_) throw std::runtime_error("cannot write " + outputs_->metrics_jsonl.string());
      nlohmann::json first;
      first["type"] = "config";
      first["format_version"] = kMetricsFormatVersion;
      first["run_id"] = outputs_->run_id;
      first["seed"] = seed;
      first["config"] = outputs_->config.is_null() ? to_json(config) : outputs_->config;
      jsonl_ << first.dump() << "\n";
    }
  }

  void episode(const EpisodeRecord& r, double real_wall_ms) {
    if (csv_.is_open()) {
      csv_ << outputs_->run_id << ',' << r.episode << ',' << r.env_step << ',' << format_double(r.episode_return)
           << ',' << format_double(r.value_loss) << ',' << format_double(r.q_loss) << ','
           << format_double(r.policy_loss) << ',' << format_double(r.wall_ms) << '\n';
      csv_.flush();
    }
    if (jsonl_.is_open()) {
      nlohmann::json j;
      j["type"] = "episode";
      j["run_id"] = outputs_->run_id;
      j["episode"] = r.episode;
      j["env_step"] = r.env_step;
      j["mean_return"] = r.episode_return;
      j["value_loss"] = std::isnan(r.value_loss) ? nlohmann::json(nullptr) : nlohmann::json(r.value_loss);
      j["q_loss"] = std::isnan(r.q_loss) ? nlohmann::json(nullptr) : nlohmann::json(r.q_loss);
      j["policy_loss"] = std::isnan(r.policy_loss) ? nlohmann::json(nullptr) : nlohmann::json(r.policy_loss);
      j["gradient_steps"] = r.gradient_steps;
      j["wall_ms"] = real_wall_ms;
      jsonl_ << j.dump() << "\n";
      jsonl_.flush();
    }
  }

  void evaluation(std::size_t env_step, const EvalResult& e, const char* type) {
    if (!jsonl_.is_open()) return;
    nlohmann::json j = to_json(e);
    j["type"] = type;
    j["run_id"] = outputs_->run_id;
    j["env_step"] = env_step;
    jsonl_ << j.dump() << "\n";
    jsonl_.flush();
  }

 private:
  const RunOutputs* outputs_;
  std::ofstream csv_;
  std::ofstream jsonl_;
};

}  // namespace

RunResult train_run(const TrainerConfig& config, const envs::EnvironmentConfig& env_config, std::uint64_t seed,
                    const RunOutputs* outputs) {
  const RunSetup s = setup(config, env_config);
  auto init_rng = stream_rng(seed, 0);
  auto env_rng = stream_rng(seed, 1);
  auto act_rng = stream_rng(seed, 2);
  auto batch_rng = stream_rng(seed, 3);
  const std::uint64_t eval_seed = stream_rng(seed, 4)();

  Learner learner(s.dims, config, s.resolved.beta, init_rng);
  ReplayBuffer buffer(config.buffer_capacity);
  auto env = envs::make_environment(env_config);
  auto eval_env = envs::make_environment(env_config);
  MetricsSink sink(outputs, config, seed);

  const std::size_t ready = std::max(config.warmup, config.batch_size);
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  std::size_t env_step = 0;
  double carry = 0.0;
  std::size_t next_eval = config.eval_interval;

  for (std::size_t episode = 0; env_step < config.total_env_steps; ++episode) {
    auto obs = env->reset(env_rng());
    EpisodeRecord rec;
    rec.episode = episode;
    std::size_t steps_here = 0;
    bool done = false;
    while (!done && env_step < config.total_env_steps) {
      const auto joint = collect_action(learner.agents(), s.dims, obs, act_rng);
      auto step = env->step(joint);
      Transition t;
      t.x = flatten(obs);
      for (const auto& a : joint) t.actions.insert(t.actions.end(), a.begin(), a.end());
      t.reward = step.reward;
      t.next_x = flatten(step.observations);
      t.done = step.done && !step.truncated;
      buffer.add(std::move(t));
      rec.episode_return += step.reward;
      done = step.done;
      obs = std::move(step.observations);
      ++env_step;
      ++steps_here;
    }
    rec.env_step = env_step;

    carry += static_cast<double>(steps_here) * config.updates_per_step;
    const auto n_updates = static_cast<std::size_t>(std::floor(carry));
    carry -= static_cast<double>(n_updates);
    double vl = 0.0, ql = 0.0, pl = 0.0;
    if (buffer.size() >= ready) {
      for (std::size_t u = 0; u < n_updates; ++u) {
        const Batch batch = make_batch(buffer.sample(config.batch_size, batch_rng), s.dims.n_agents, s.dims.obs_dim);
        const UpdateNoise noise =
            sample_update_noise(config.batch_size, s.dims.n_agents, s.dims.act_dim, s.dims.dim_z, batch_rng);
        UpdateStats stats;
        try {
          stats = learner.update(batch, noise, result.gradient_steps);
        } catch (const TrainingError& e) {
          throw TrainingError(std::string(e.what()) + " (episode " + std::to_string(episode) + ", env step " +
                              std::to_string(env_step) + ", seed " + std::to_string(seed) + ")");
        }
        ++result.gradient_steps;
        ++rec.gradient_steps;
        vl += stats.mean_value_loss();
        ql += stats.mean_q_loss();
        pl += stats.mean_policy_loss();
      }
    }
    const double denom = static_cast<double>(rec.gradient_steps);
    rec.value_loss = rec.gradient_steps ? vl / denom : kNaN;
    rec.q_loss = rec.gradient_steps ? ql / denom : kNaN;
    rec.policy_loss = rec.gradient_steps ? pl / denom : kNaN;
    const double real_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    rec.wall_ms = config.log_wall_time ? real_ms : 0.0;
    sink.episode(rec, real_ms);
    result.episodes.push_back(rec);

    if (config.eval_interval > 0 && env_step >= next_eval) {
      auto e = evaluate(learner.agents(), s.dims, *eval_env, config.eval_mode, config.eval_episodes, eval_seed);
      sink.evaluation(env_step, e, "eval");
      result.evaluations.emplace_back(env_step, std::move(e));
      while (next_eval <= env_step) next_eval += config.eval_interval;
    }
  }

  const std::size_t final_episodes = std::max<std::size_t>(config.eval_episodes, 1);
  result.final_mean_z =
      evaluate(learner.agents(), s.dims, *eval_env, ExecutionMode::mean_z, final_episodes, eval_seed);
  result.final_shared_seed_z =
      evaluate(learner.agents(), s.dims, *eval_env, ExecutionMode::shared_seed_z, final_episodes, eval_seed);
  sink.evaluation(env_step, result.final_mean_z, "final");
  sink.evaluation(env_step, result.final_shared_seed_z, "final");

  if (outputs && !outputs->checkpoint.empty()) {
    ad::Checkpoint ckpt = learner.checkpoint();
    ckpt.meta["env"] = envs::to_string(env_config.kind);
    ckpt.meta["variant"] = to_string(config.variant);
    ckpt.meta["seed"] = std::to_string(seed);
    ckpt.meta["run_id"] = outputs->run_id;
    ad::write_checkpoint(outputs->checkpoint, ckpt);
  }
  return result;
}

std::vector<double> rollout_baseline(const TrainerConfig& config, const envs::EnvironmentConfig& env_config,
                                     std::uint64_t seed) {
  const RunSetup s = setup(config, env_config);
  auto init_rng = stream_rng(seed, 0);
  auto env_rng = stream_rng(seed, 1);
  auto act_rng = stream_rng(seed, 2);
  std::vector<AgentModules> agents;
  for (std::size_t k = 0; k < s.dims.n_agents; ++k) agents.emplace_back(s.dims, init_rng);
  auto env = envs::make_environment(env_config);
  std::vector<double> returns;
  std::size_t env_step = 0;
  while (env_step < config.total_env_steps) {
    auto obs = env->reset(env_rng());
    double total = 0.0;
    bool done = false;
    while (!done && env_step < config.total_env_steps) {
      auto step = env->step(collect_action(agents, s.dims, obs, act_rng));
      total += step.reward;
      done = step.done;
      obs = std::move(step.observations);
      ++env_step;
    }
    returns.push_back(total);
  }
  return returns;
}

}  // namespace vm3ac::core
