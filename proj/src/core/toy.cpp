#include "vm3ac/core/toy.hpp"

#include <cmath>
#include <stdexcept>

#include "vm3ac/autodiff/adam.hpp"

namespace vm3ac::core {

namespace {

struct Draw {
  envs::Vec2 z;
  envs::Vec2 n1;
  envs::Vec2 n2;
};

Draw draw(ToyZMode mode, const ToyConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(c.z_low, c.z_high);
  std::normal_distribution<double> noise(0.0, c.noise_std);
  Draw d;
  d.z = mode == ToyZMode::fixed ? c.fixed_z : envs::Vec2{unif(rng), unif(rng)};
  d.n1 = {noise(rng), noise(rng)};
  d.n2 = {noise(rng), noise(rng)};
  return d;
}

envs::ToyMeet make_env(std::size_t horizon) {
  envs::ToyMeetConfig c;
  c.horizon = horizon;
  return envs::ToyMeet(c);
}

envs::Vec2 as_vec(const std::vector<double>& v) { return {v.at(0), v.at(1)}; }

}  // namespace

envs::Vec2 toy_action(const Mat2& w, const envs::Vec2& obs, const envs::Vec2& z, const envs::Vec2& noise) {
  return {w[0] * z[0] + w[1] * z[1] + noise[0], 0.1 * obs[1] + w[2] * z[0] + w[3] * z[1] + noise[1]};
}

ToyResult train_toy(const ToyConfig& config, std::uint64_t seed) {
  if (config.steps == 0) throw std::invalid_argument("toy: steps must be at least 1");
  if (config.train_horizon == 0) throw std::invalid_argument("toy: train_horizon must be at least 1");
  std::mt19937_64 rng(seed);
  ad::Tensor w1 = ad::Tensor::zeros({2, 2});
  ad::Tensor w2 = ad::Tensor::zeros({2, 2});
  const ad::ParamList params{{"w1", &w1}, {"w2", &w2}};
  ad::AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  ad::AdamState state = ad::AdamState::for_params(params, adam);

  const auto mat = [](const ad::Tensor& t) { return Mat2{t[0], t[1], t[2], t[3]}; };
  ToyResult result;
  envs::ToyMeet env = make_env(config.train_horizon);
  auto obs = env.reset(seed);
  for (std::size_t step = 0; step < config.steps; ++step) {
    const Draw d = draw(ToyZMode::random, config, rng);
    const auto a1 = toy_action(mat(w1), as_vec(obs[0]), d.z, d.n1);
    const auto a2 = toy_action(mat(w2), as_vec(obs[1]), d.z, d.n2);
    const auto out = env.step({{a1[0], a1[1]}, {a2[0], a2[1]}});
    // Minimize the post-move distance: d dist / d a^1 = u, d dist / d a^2 = -u.
    const auto& p = env.positions();
    const double dist = env.distance();
    ad::Tensor g1 = ad::Tensor::zeros({2, 2});
    ad::Tensor g2 = ad::Tensor::zeros({2, 2});
    if (dist > 0.0) {
      for (std::size_t r = 0; r < 2; ++r) {
        const double u = (p[0][r] - p[1][r]) / dist;
        for (std::size_t c = 0; c < 2; ++c) {
          g1[r * 2 + c] = u * d.z[c];
          g2[r * 2 + c] = -u * d.z[c];
        }
      }
    }
    ad::adam_step(params, std::vector<ad::Tensor>{g1, g2}, state);
    obs = out.done ? env.reset(seed) : out.observations;
    if (config.history_every && (step + 1) % config.history_every == 0) {
      result.history.push_back({step + 1, {mat(w1), mat(w2)}});
    }
  }
  result.w1 = mat(w1);
  result.w2 = mat(w2);
  result.sign_pattern = sign_pattern_holds(result.w1, result.w2);
  result.random_z = rollout_toy(result.w1, result.w2, ToyZMode::random, config, rng);
  result.fixed_z = rollout_toy(result.w1, result.w2, ToyZMode::fixed, config, rng);
  return result;
}

ToyTrajectory rollout_toy(const Mat2& w1, const Mat2& w2, ToyZMode mode, const ToyConfig& config,
                          std::mt19937_64& rng) {
  ToyTrajectory t;
  t.mode = mode;
  envs::ToyMeet env = make_env(config.exec_steps);
  auto obs = env.reset(0);
  t.agent1.push_back(env.positions()[0]);
  t.agent2.push_back(env.positions()[1]);
  t.distance.push_back(env.distance());
  for (std::size_t step = 0; step < config.exec_steps; ++step) {
    // Execution uses the deterministic part of each policy.
    const Draw d = draw(mode, config, rng);
    const auto a1 = toy_action(w1, as_vec(obs[0]), d.z, {0.0, 0.0});
    const auto a2 = toy_action(w2, as_vec(obs[1]), d.z, {0.0, 0.0});
    const auto out = env.step({{a1[0], a1[1]}, {a2[0], a2[1]}});
    t.agent1.push_back(env.positions()[0]);
    t.agent2.push_back(env.positions()[1]);
    t.distance.push_back(env.distance());
    if (out.info.at("met") > 0.0) {
      t.met = true;
      t.meet_step = step + 1;
      break;
    }
    obs = out.observations;
  }
  return t;
}

bool sign_pattern_holds(const Mat2& w1, const Mat2& w2, double row2_tolerance) {
  return w1[0] > 0.0 && w1[1] > 0.0 && w2[0] < 0.0 && w2[1] < 0.0 && std::abs(w1[2]) < row2_tolerance &&
         std::abs(w1[3]) < row2_tolerance && std::abs(w2[2]) < row2_tolerance && std::abs(w2[3]) < row2_tolerance;
}

CovarianceCheck covariance_check(const Mat2& w1, const Mat2& w2, std::size_t draws, const ToyConfig& config,
                                 std::mt19937_64& rng) {
  if (draws < 2) throw std::invalid_argument("covariance check needs at least two draws");
  const envs::Vec2 o1{-1.0, 1.0}, o2{1.0, 1.0};
  std::vector<envs::Vec2> a1(draws), a2(draws);
  envs::Vec2 m1{}, m2{};
  for (std::size_t k = 0; k < draws; ++k) {
    const Draw d = draw(ToyZMode::random, config, rng);
    a1[k] = toy_action(w1, o1, d.z, d.n1);
    a2[k] = toy_action(w2, o2, d.z, d.n2);
    for (std::size_t r = 0; r < 2; ++r) {
      m1[r] += a1[k][r] / static_cast<double>(draws);
      m2[r] += a2[k][r] / static_cast<double>(draws);
    }
  }
  CovarianceCheck out;
  const double width = config.z_high - config.z_low;
  const double var_z = width * width / 12.0;
  const double n = static_cast<double>(draws);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      // Products of centred samples; their spread gives the standard error.
      double sum = 0.0, sum_sq = 0.0;
      for (std::size_t k = 0; k < draws; ++k) {
        const double prod = (a1[k][r] - m1[r]) * (a2[k][c] - m2[c]);
        sum += prod;
        sum_sq += prod * prod;
      }
      const double cov = sum / (n - 1.0);
      const double mean_prod = sum / n;
      const double var_prod = (sum_sq / n - mean_prod * mean_prod) * n / (n - 1.0);
      out.sample[r * 2 + c] = cov;
      out.standard_error[r * 2 + c] = std::sqrt(var_prod / n);
      out.expected[r * 2 + c] = var_z * (w1[r * 2 + 0] * w2[c * 2 + 0] + w1[r * 2 + 1] * w2[c * 2 + 1]);
      const double se = out.standard_error[r * 2 + c];
      const double gap = std::abs(cov - out.expected[r * 2 + c]);
      out.worst_z = std::max(out.worst_z, se > 0.0 ? gap / se : (gap == 0.0 ? 0.0 : INFINITY));
    }
  }
  return out;
}

}  // namespace vm3ac::core
