#pragma once

// Random tiny trainer problems shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fd.hpp"
#include "reference.hpp"
#include "vm3ac/autodiff/tape.hpp"
#include "vm3ac/core/trainer.hpp"

namespace vm3ac::testing {

struct TinyProblem {
  core::ModelDims dims;
  core::LossContext ctx;
  std::vector<core::AgentModules> agents;
  core::Batch batch;
  core::UpdateNoise noise;
};

struct TinyOptions {
  std::size_t n_agents = 2;
  std::size_t obs_dim = 3;
  std::size_t act_dim = 2;
  std::size_t dim_z = 2;
  std::vector<std::size_t> hidden = {5};
  std::size_t batch = 3;
  double beta = 0.3;
  double gamma = 0.9;
  double q_sigma = 0.4;
  bool variational = true;
};

inline TinyProblem tiny_problem(std::uint64_t seed, const TinyOptions& o = {}) {
  std::mt19937_64 rng(seed);
  TinyProblem p;
  p.dims.n_agents = o.n_agents;
  p.dims.obs_dim = o.obs_dim;
  p.dims.act_dim = o.act_dim;
  p.dims.dim_z = o.dim_z;
  p.dims.hidden = o.hidden;
  p.dims.uses_variational = o.variational && o.n_agents > 1;
  p.dims.shared_variational = true;
  p.ctx.dims = p.dims;
  p.ctx.beta = o.beta;
  p.ctx.gamma = o.gamma;
  p.ctx.q_sigma = o.q_sigma;
  for (std::size_t k = 0; k < o.n_agents; ++k) {
    p.agents.emplace_back(p.dims, rng);
    // Move the target network away from the online one.
    for (auto& w : p.agents.back().value_target.weights()) {
      for (auto& v : w.data()) v += std::normal_distribution<double>(0.0, 0.1)(rng);
    }
  }
  std::uniform_real_distribution<double> obs(-1.0, 1.0), act(-0.9, 0.9), rew(-2.0, 2.0);
  std::vector<core::Transition> ts;
  for (std::size_t r = 0; r < o.batch; ++r) {
    core::Transition t;
    for (std::size_t k = 0; k < o.n_agents * o.obs_dim; ++k) {
      t.x.push_back(obs(rng));
      t.next_x.push_back(obs(rng));
    }
    for (std::size_t k = 0; k < o.n_agents * o.act_dim; ++k) t.actions.push_back(act(rng));
    t.reward = rew(rng);
    t.done = r == 0;
    ts.push_back(std::move(t));
  }
  p.batch = core::make_batch(ts, o.n_agents, o.obs_dim);
  p.noise = core::sample_update_noise(o.batch, o.n_agents, o.act_dim, o.dim_z, rng);
  return p;
}

inline reference::Agent to_reference(const core::AgentModules& a) {
  reference::Agent r;
  r.policy = reference::copy_net(a.policy);
  r.q1 = reference::copy_net(a.q1);
  r.q2 = reference::copy_net(a.q2);
  r.value = reference::copy_net(a.value);
  r.target = reference::copy_net(a.value_target);
  for (const auto& x : a.xi) r.xi.push_back(reference::copy_net(x));
  return r;
}

inline reference::Sample to_reference(const TinyProblem& p) {
  reference::Sample s;
  const auto row = [](const ad::Tensor& t, std::size_t r) {
    return reference::Row(t.values().begin() + static_cast<std::ptrdiff_t>(r * t.cols()),
                          t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols()));
  };
  for (std::size_t r = 0; r < p.batch.size(); ++r) {
    s.x.push_back(row(p.batch.x, r));
    s.next_x.push_back(row(p.batch.next_x, r));
    s.actions.push_back(row(p.batch.actions, r));
    s.reward.push_back(p.batch.reward[r]);
    s.done.push_back(p.batch.done[r]);
    s.z.push_back(p.noise.z.cols() ? row(p.noise.z, r) : reference::Row{});
    std::vector<reference::Row> o, e;
    for (std::size_t k = 0; k < p.dims.n_agents; ++k) {
      o.push_back(row(p.batch.obs[k], r));
      e.push_back(row(p.noise.eps[k], r));
    }
    s.obs.push_back(std::move(o));
    s.eps.push_back(std::move(e));
  }
  return s;
}

/// Worst componentwise relative error between tape and central-difference
/// gradients over every parameter in `params`.
inline double check_params(const ad::ParamList& params, const ad::Gradients& grads,
                           const std::function<double()>& loss, double h = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  for (const auto& p : params) {
    const ad::Tensor original = p.tensor->detach();
    const auto f = [&](const ad::Tensor& probe) {
      *p.tensor = probe;
      return loss();
    };
    const ad::Tensor numeric = numeric_gradient(f, original, h);
    *p.tensor = original;
    worst = std::max(worst, max_relative_error(grads.of(*p.tensor), numeric, floor));
  }
  return worst;
}

struct LossGradientErrors {
  double value = 0.0;
  double q = 0.0;
  double policy = 0.0;
};

/// Tape gradients of the three losses against central differences for
/// agent `i` of a tiny problem. The policy surrogate holds the stop-gradient
/// factor of each log q^(i,j) at its unperturbed value.
inline LossGradientErrors loss_gradient_errors(TinyProblem& p, std::size_t i) {
  LossGradientErrors out;
  auto& agent = p.agents[i];
  const core::JointSample sample = core::sample_joint(p.agents, p.batch, p.noise);

  const ad::Tensor v_hat = core::value_target(p.agents, i, p.batch, sample, p.noise, p.ctx);
  {
    ad::Tape tape;
    const auto grads = tape.backward(core::value_loss(agent, p.batch, v_hat, &tape));
    out.value = check_params(agent.value_params(), grads,
                             [&] { return core::value_loss(agent, p.batch, v_hat, nullptr).item(); });
  }
  const ad::Tensor q_hat = core::q_target(agent, p.batch, p.ctx.gamma);
  {
    ad::Tape tape;
    const auto grads = tape.backward(core::q_loss(agent, p.batch, q_hat, &tape));
    out.q = check_params(agent.critic_params(), grads,
                         [&] { return core::q_loss(agent, p.batch, q_hat, nullptr).item(); });
  }
  {
    const auto frozen_factor = [&]() {
      double sum = 0.0;
      if (!p.dims.uses_variational) return sum;
      const auto q = core::variational(agent, p.dims, p.ctx.q_sigma);
      const auto a_i =
          core::policy_distribution(agent, p.batch.obs[i], p.noise.z).sample(p.noise.eps[i]).action;
      for (std::size_t j = 0; j < p.agents.size(); ++j) {
        if (j == i) continue;
        const auto pair =
            dist::paired_log_q(q, a_i, sample.actions[j], p.batch.obs[i], p.batch.obs[j], i, j, nullptr);
        sum += ad::mean(pair.factor_a).item();
      }
      return sum * p.ctx.beta / static_cast<double>(p.agents.size());
    };
    const double factor0 = frozen_factor();
    ad::Tape tape;
    const auto grads = tape.backward(core::policy_loss(p.agents, i, p.batch, sample, p.noise, p.ctx, &tape));
    out.policy = check_params(agent.policy_params(), grads, [&] {
      return core::policy_loss(p.agents, i, p.batch, sample, p.noise, p.ctx, nullptr).item() + frozen_factor() -
             factor0;
    });
  }
  return out;
}

}  // namespace vm3ac::testing
