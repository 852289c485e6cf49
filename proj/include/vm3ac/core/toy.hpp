#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "vm3ac/envs/environment.hpp"

namespace vm3ac::core {

/// 2x2 matrix, row-major.
using Mat2 = std::array<double, 4>;

/// Two-agent linear stochastic policies on the meeting task:
///   a^i = A o^i + W^i z + n^i,  A = [[0, 0], [0, 0.1]],
/// z ~ Unif[z_low, z_high]^2 shared by both agents, n^i ~ N(0, noise_std^2 I).
struct ToyConfig {
  std::size_t steps = 20000;
  double learning_rate = 3e-4;
  double noise_std = 1e-3;
  double z_low = 0.0;
  double z_high = 0.1;
  /// Training episodes restart after this many steps or on meeting.
  std::size_t train_horizon = 50;
  std::size_t exec_steps = 50;
  std::array<double, 2> fixed_z = {0.05, 0.05};
  /// Weight snapshots are recorded every this many steps (0 = none).
  std::size_t history_every = 100;
};

enum class ToyZMode { random, fixed };

struct ToyTrajectory {
  ToyZMode mode = ToyZMode::random;
  std::vector<envs::Vec2> agent1;
  std::vector<envs::Vec2> agent2;
  std::vector<double> distance;
  bool met = false;
  /// Number of steps taken when the agents first came within the meeting distance.
  std::size_t meet_step = 0;
};

struct ToyResult {
  Mat2 w1{};
  Mat2 w2{};
  std::vector<std::pair<std::size_t, std::pair<Mat2, Mat2>>> history;
  ToyTrajectory random_z;
  ToyTrajectory fixed_z;
  bool sign_pattern = false;
};

/// a^i for one agent given its observation, the shared latent and its noise.
envs::Vec2 toy_action(const Mat2& w, const envs::Vec2& obs, const envs::Vec2& z, const envs::Vec2& noise);

/// Greedy training of W^1, W^2 with Adam on the one-step distance after
/// the joint move, starting from zero weights.
ToyResult train_toy(const ToyConfig& config, std::uint64_t seed);

ToyTrajectory rollout_toy(const Mat2& w1, const Mat2& w2, ToyZMode mode, const ToyConfig& config,
                          std::mt19937_64& rng);

/// Agent 1 row-1 weights > 0, agent 2 row-1 weights < 0, row-2 weights
/// below `row2_tolerance` in magnitude.
bool sign_pattern_holds(const Mat2& w1, const Mat2& w2, double row2_tolerance = 0.02);

struct CovarianceCheck {
  Mat2 sample{};
  Mat2 expected{};
  Mat2 standard_error{};
  /// Largest |sample - expected| / standard_error over the four entries.
  double worst_z = 0.0;
};

/// Monte-Carlo cross-covariance of (a^1, a^2) at a fixed state versus
/// W^1 C_z (W^2)^T.
CovarianceCheck covariance_check(const Mat2& w1, const Mat2& w2, std::size_t draws, const ToyConfig& config,
                                 std::mt19937_64& rng);

}  // namespace vm3ac::core
