#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace vm3ac::envs {

using Vec2 = std::array<double, 2>;
using Observation = std::vector<double>;
using JointObservation = std::vector<Observation>;
using JointAction = std::vector<std::vector<double>>;

/// Static shape of an environment, used to wire networks.
struct EnvSpec {
  std::size_t n_agents = 0;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::size_t horizon = 0;
  /// Each action component is clipped to [-action_limit, action_limit].
  double action_limit = 1.0;
};

struct EnvStep {
  JointObservation observations;
  /// Shared by every agent.
  double reward = 0.0;
  bool done = false;
  /// The episode ended only because the horizon was reached.
  bool truncated = false;
  std::map<std::string, double> info;
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual EnvSpec spec() const = 0;
  virtual JointObservation reset(std::uint64_t seed) = 0;
  virtual EnvStep step(const JointAction& joint_action) = 0;
};

struct ToyMeetConfig {
  double meet_distance = 0.1;
  std::size_t horizon = 500;
  /// The linear toy model moves by the raw displacement; no clipping.
  double action_limit = std::numeric_limits<double>::infinity();
};

struct PredatorPreyConfig {
  std::size_t n_predators = 2;
  std::size_t n_prey = 16;
  std::size_t capture_agents = 1;
  double capture_radius = 0.25;
  double arena_half_size = 2.0;
  std::size_t horizon = 100;
  double capture_reward = 10.0;
  /// Capture reward is multiplied by this after every full respawn wave.
  double respawn_multiplier = 2.0;
  double velocity_scale = 0.1;
};

struct CoopNavConfig {
  std::size_t n_agents = 3;
  std::size_t n_landmarks = 3;
  std::size_t horizon = 50;
  double collision_penalty = 10.0;
  double occupy_bonus = 1.0;
  double occupy_radius = 0.1;
  double collision_distance = 0.1;
  double arena_half_size = 1.0;
  double velocity_scale = 0.1;
};

enum class EnvKind { toy_meet, predator_prey, coop_nav };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& name);

struct EnvironmentConfig {
  EnvKind kind = EnvKind::predator_prey;
  ToyMeetConfig toy_meet;
  PredatorPreyConfig predator_prey;
  CoopNavConfig coop_nav;
};

std::unique_ptr<Environment> make_environment(const EnvironmentConfig& config);

/// Static spec without constructing an episode.
EnvSpec observation_spec(const EnvironmentConfig& config);

/// Validates the joint action and returns a clipped copy.
JointAction clip_joint_action(const EnvSpec& spec, const JointAction& joint_action);

/// Two agents in the upper half-plane that must meet. Each agent observes
/// only its own position; the reward is minus the post-step distance.
class ToyMeet final : public Environment {
 public:
  explicit ToyMeet(ToyMeetConfig config = {});

  std::string id() const override { return "toy_meet"; }
  EnvSpec spec() const override;
  JointObservation reset(std::uint64_t seed) override;
  EnvStep step(const JointAction& joint_action) override;

  const std::array<Vec2, 2>& positions() const { return positions_; }
  double distance() const;

 private:
  JointObservation observe() const;

  ToyMeetConfig config_;
  std::array<Vec2, 2> positions_{};
  std::size_t t_ = 0;
  bool done_ = true;
};

/// Continuous predator-prey: stationary prey on a square lattice, captured
/// when at least `capture_agents` predators are inside the capture radius
/// in the same step.
class PredatorPrey final : public Environment {
 public:
  explicit PredatorPrey(PredatorPreyConfig config = {});

  std::string id() const override { return "predator_prey"; }
  EnvSpec spec() const override;
  JointObservation reset(std::uint64_t seed) override;
  EnvStep step(const JointAction& joint_action) override;

  const std::vector<Vec2>& predators() const { return predators_; }
  const std::vector<Vec2>& prey() const { return prey_; }
  const std::vector<bool>& prey_alive() const { return alive_; }
  double current_capture_reward() const { return capture_reward_; }
  std::size_t total_captures() const { return captures_; }

  /// Places the predators directly; for tests and scripted scenarios.
  void set_predators(const std::vector<Vec2>& positions);

  static std::vector<Vec2> lattice(std::size_t count, double arena_half_size);

 private:
  JointObservation observe() const;

  PredatorPreyConfig config_;
  std::vector<Vec2> predators_;
  std::vector<Vec2> prey_;
  std::vector<bool> alive_;
  double capture_reward_ = 0.0;
  std::size_t captures_ = 0;
  std::size_t t_ = 0;
  bool done_ = true;
};

/// Cooperative navigation: cover every landmark without colliding.
class CoopNav final : public Environment {
 public:
  explicit CoopNav(CoopNavConfig config = {});

  std::string id() const override { return "coop_nav"; }
  EnvSpec spec() const override;
  JointObservation reset(std::uint64_t seed) override;
  EnvStep step(const JointAction& joint_action) override;

  const std::vector<Vec2>& agents() const { return agents_; }
  const std::vector<Vec2>& landmarks() const { return landmarks_; }
  void set_state(const std::vector<Vec2>& agents, const std::vector<Vec2>& landmarks);

  /// Reward of the current configuration, with collision and coverage counts.
  double reward(std::size_t* collisions = nullptr, bool* all_occupied = nullptr) const;

 private:
  JointObservation observe() const;

  CoopNavConfig config_;
  std::vector<Vec2> agents_;
  std::vector<Vec2> landmarks_;
  std::size_t t_ = 0;
  bool done_ = true;
};

}  // namespace vm3ac::envs
