#include "vm3ac/envs/environment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace vm3ac::envs {

namespace {

double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

void push_relative(Observation& obs, const Vec2& from, const Vec2& to) {
  obs.push_back(to[0] - from[0]);
  obs.push_back(to[1] - from[1]);
}

Vec2 uniform_point(std::mt19937_64& rng, double half_size) {
  std::uniform_real_distribution<double> u(-half_size, half_size);
  const double x = u(rng);
  const double y = u(rng);
  return {x, y};
}

void require_not_done(bool done, const std::string& id) {
  if (done) throw std::logic_error(id + ": step() after episode end; call reset()");
}

}  // namespace

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::toy_meet: return "toy_meet";
    case EnvKind::predator_prey: return "predator_prey";
    case EnvKind::coop_nav: return "coop_nav";
  }
  return "unknown";
}

EnvKind env_kind_from_string(const std::string& name) {
  if (name == "toy_meet") return EnvKind::toy_meet;
  if (name == "predator_prey") return EnvKind::predator_prey;
  if (name == "coop_nav") return EnvKind::coop_nav;
  throw std::invalid_argument("unknown environment id '" + name +
                              "' (expected toy_meet, predator_prey or coop_nav)");
}

std::unique_ptr<Environment> make_environment(const EnvironmentConfig& config) {
  switch (config.kind) {
    case EnvKind::toy_meet: return std::make_unique<ToyMeet>(config.toy_meet);
    case EnvKind::predator_prey: return std::make_unique<PredatorPrey>(config.predator_prey);
    case EnvKind::coop_nav: return std::make_unique<CoopNav>(config.coop_nav);
  }
  throw std::invalid_argument("make_environment: bad kind");
}

EnvSpec observation_spec(const EnvironmentConfig& config) { return make_environment(config)->spec(); }

JointAction clip_joint_action(const EnvSpec& spec, const JointAction& joint_action) {
  if (joint_action.size() != spec.n_agents) {
    throw std::invalid_argument("step: expected " + std::to_string(spec.n_agents) +
                                " agent actions, got " + std::to_string(joint_action.size()));
  }
  JointAction clipped = joint_action;
  for (std::size_t i = 0; i < clipped.size(); ++i) {
    if (clipped[i].size() != spec.act_dim) {
      throw std::invalid_argument("step: agent " + std::to_string(i) + " action has dim " +
                                  std::to_string(clipped[i].size()) + ", expected " +
                                  std::to_string(spec.act_dim));
    }
    for (double& v : clipped[i]) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("step: agent " + std::to_string(i) + " action is not finite");
      }
      v = std::clamp(v, -spec.action_limit, spec.action_limit);
    }
  }
  return clipped;
}

// ---------------------------------------------------------------- ToyMeet

ToyMeet::ToyMeet(ToyMeetConfig config) : config_(config) {
  if (config_.horizon == 0) throw std::invalid_argument("toy_meet: horizon must be positive");
}

EnvSpec ToyMeet::spec() const { return {2, 2, 2, config_.horizon, config_.action_limit}; }

JointObservation ToyMeet::reset(std::uint64_t) {
  positions_ = {Vec2{-1.0, 1.0}, Vec2{1.0, 1.0}};
  t_ = 0;
  done_ = false;
  return observe();
}

double ToyMeet::distance() const { return envs::distance(positions_[0], positions_[1]); }

EnvStep ToyMeet::step(const JointAction& joint_action) {
  require_not_done(done_, id());
  const auto action = clip_joint_action(spec(), joint_action);
  for (std::size_t i = 0; i < 2; ++i) {
    positions_[i][0] += action[i][0];
    positions_[i][1] += action[i][1];
  }
  ++t_;
  EnvStep out;
  const double d = distance();
  out.reward = -d;
  const bool met = d < config_.meet_distance;
  out.done = met || t_ >= config_.horizon;
  out.truncated = !met && out.done;
  out.info["distance"] = d;
  out.info["met"] = met ? 1.0 : 0.0;
  out.observations = observe();
  done_ = out.done;
  return out;
}

JointObservation ToyMeet::observe() const {
  return {Observation{positions_[0][0], positions_[0][1]},
          Observation{positions_[1][0], positions_[1][1]}};
}

// ----------------------------------------------------------- PredatorPrey

PredatorPrey::PredatorPrey(PredatorPreyConfig config) : config_(config) {
  if (config_.n_predators == 0) throw std::invalid_argument("predator_prey: need at least one predator");
  if (config_.n_prey == 0) throw std::invalid_argument("predator_prey: need at least one prey");
  if (config_.capture_agents == 0 || config_.capture_agents > config_.n_predators) {
    throw std::invalid_argument("predator_prey: capture_agents must be in [1, n_predators]");
  }
  if (config_.horizon == 0) throw std::invalid_argument("predator_prey: horizon must be positive");
  if (!(config_.capture_radius > 0.0) || !(config_.arena_half_size > 0.0)) {
    throw std::invalid_argument("predator_prey: radius and arena size must be positive");
  }
}

EnvSpec PredatorPrey::spec() const {
  return {config_.n_predators, 2 * (config_.n_predators - 1) + 2 * config_.n_prey, 2, config_.horizon, 1.0};
}

std::vector<Vec2> PredatorPrey::lattice(std::size_t count, double arena_half_size) {
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  const double cell = 2.0 * arena_half_size / static_cast<double>(side);
  std::vector<Vec2> points;
  points.reserve(count);
  for (std::size_t r = 0; r < side && points.size() < count; ++r) {
    for (std::size_t c = 0; c < side && points.size() < count; ++c) {
      points.push_back({-arena_half_size + (static_cast<double>(c) + 0.5) * cell,
                        -arena_half_size + (static_cast<double>(r) + 0.5) * cell});
    }
  }
  return points;
}

JointObservation PredatorPrey::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  predators_.clear();
  for (std::size_t i = 0; i < config_.n_predators; ++i) {
    predators_.push_back(uniform_point(rng, config_.arena_half_size));
  }
  prey_ = lattice(config_.n_prey, config_.arena_half_size);
  alive_.assign(config_.n_prey, true);
  capture_reward_ = config_.capture_reward;
  captures_ = 0;
  t_ = 0;
  done_ = false;
  return observe();
}

void PredatorPrey::set_predators(const std::vector<Vec2>& positions) {
  if (positions.size() != config_.n_predators) {
    throw std::invalid_argument("predator_prey: set_predators needs " + std::to_string(config_.n_predators) +
                                " positions");
  }
  predators_ = positions;
}

EnvStep PredatorPrey::step(const JointAction& joint_action) {
  require_not_done(done_, id());
  const auto action = clip_joint_action(spec(), joint_action);
  const double h = config_.arena_half_size;
  for (std::size_t i = 0; i < predators_.size(); ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      predators_[i][k] = std::clamp(predators_[i][k] + config_.velocity_scale * action[i][k], -h, h);
    }
  }

  EnvStep out;
  std::size_t captured_now = 0;
  for (std::size_t p = 0; p < prey_.size(); ++p) {
    if (!alive_[p]) continue;
    std::size_t near = 0;
    for (const auto& pred : predators_) {
      if (distance(pred, prey_[p]) <= config_.capture_radius) ++near;
    }
    if (near >= config_.capture_agents) {
      alive_[p] = false;
      out.reward += capture_reward_;
      ++captured_now;
    }
  }
  captures_ += captured_now;
  if (std::none_of(alive_.begin(), alive_.end(), [](bool a) { return a; })) {
    alive_.assign(prey_.size(), true);
    capture_reward_ *= config_.respawn_multiplier;
    out.info["respawned"] = 1.0;
  }

  ++t_;
  out.done = t_ >= config_.horizon;
  out.truncated = out.done;
  out.info["captures"] = static_cast<double>(captured_now);
  out.observations = observe();
  done_ = out.done;
  return out;
}

JointObservation PredatorPrey::observe() const {
  JointObservation all;
  all.reserve(predators_.size());
  for (std::size_t i = 0; i < predators_.size(); ++i) {
    Observation obs;
    obs.reserve(spec().obs_dim);
    for (std::size_t k = 0; k < predators_.size(); ++k) {
      if (k != i) push_relative(obs, predators_[i], predators_[k]);
    }
    for (std::size_t p = 0; p < prey_.size(); ++p) {
      if (alive_[p]) {
        push_relative(obs, predators_[i], prey_[p]);
      } else {
        obs.push_back(0.0);
        obs.push_back(0.0);
      }
    }
    all.push_back(std::move(obs));
  }
  return all;
}

// ---------------------------------------------------------------- CoopNav

CoopNav::CoopNav(CoopNavConfig config) : config_(config) {
  if (config_.n_agents == 0 || config_.n_landmarks == 0) {
    throw std::invalid_argument("coop_nav: need at least one agent and one landmark");
  }
  if (config_.horizon == 0) throw std::invalid_argument("coop_nav: horizon must be positive");
}

EnvSpec CoopNav::spec() const {
  return {config_.n_agents, 2 * (config_.n_agents - 1) + 2 * config_.n_landmarks, 2, config_.horizon, 1.0};
}

JointObservation CoopNav::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  agents_.clear();
  landmarks_.clear();
  for (std::size_t i = 0; i < config_.n_agents; ++i) agents_.push_back(uniform_point(rng, config_.arena_half_size));
  for (std::size_t l = 0; l < config_.n_landmarks; ++l) {
    landmarks_.push_back(uniform_point(rng, config_.arena_half_size));
  }
  t_ = 0;
  done_ = false;
  return observe();
}

void CoopNav::set_state(const std::vector<Vec2>& agents, const std::vector<Vec2>& landmarks) {
  if (agents.size() != config_.n_agents || landmarks.size() != config_.n_landmarks) {
    throw std::invalid_argument("coop_nav: set_state size mismatch");
  }
  agents_ = agents;
  landmarks_ = landmarks;
  t_ = 0;
  done_ = false;
}

double CoopNav::reward(std::size_t* collisions, bool* all_occupied) const {
  double r = 0.0;
  bool occupied = true;
  for (const auto& l : landmarks_) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& a : agents_) nearest = std::min(nearest, distance(a, l));
    r -= nearest;
    if (nearest > config_.occupy_radius) occupied = false;
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    for (std::size_t k = i + 1; k < agents_.size(); ++k) {
      if (distance(agents_[i], agents_[k]) < config_.collision_distance) ++hits;
    }
  }
  r -= config_.collision_penalty * static_cast<double>(hits);
  if (occupied) r += config_.occupy_bonus;
  if (collisions) *collisions = hits;
  if (all_occupied) *all_occupied = occupied;
  return r;
}

EnvStep CoopNav::step(const JointAction& joint_action) {
  require_not_done(done_, id());
  const auto action = clip_joint_action(spec(), joint_action);
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    agents_[i][0] += config_.velocity_scale * action[i][0];
    agents_[i][1] += config_.velocity_scale * action[i][1];
  }
  ++t_;
  EnvStep out;
  std::size_t hits = 0;
  bool occupied = false;
  out.reward = reward(&hits, &occupied);
  out.done = t_ >= config_.horizon;
  out.truncated = out.done;
  out.info["collisions"] = static_cast<double>(hits);
  out.info["all_occupied"] = occupied ? 1.0 : 0.0;
  out.observations = observe();
  done_ = out.done;
  return out;
}

JointObservation CoopNav::observe() const {
  JointObservation all;
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    Observation obs;
    for (std::size_t k = 0; k < agents_.size(); ++k) {
      if (k != i) push_relative(obs, agents_[i], agents_[k]);
    }
    for (const auto& l : landmarks_) push_relative(obs, agents_[i], l);
    all.push_back(std::move(obs));
  }
  return all;
}

}  // namespace vm3ac::envs
