#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "config.hpp"

namespace vm3ac::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

struct TrainOptions {
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> out;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::string mode = "mean_z";
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out;
};

struct TabularOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::string inject_bug;
  std::optional<std::filesystem::path> out;
};

struct ToyOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct PlotOptions {
  std::vector<std::filesystem::path> csvs;
  std::string column = "mean_return";
  std::filesystem::path out = "metrics.svg";
  std::size_t bins = 50;
};

/// Each returns an ExitCode; diagnostics go to `err`.
int run_train(const TrainOptions& o, std::ostream& out, std::ostream& err);
int run_eval(const EvalOptions& o, std::ostream& out, std::ostream& err);
int run_tabular_verify(const TabularOptions& o, std::ostream& out, std::ostream& err);
int run_toy(const ToyOptions& o, std::ostream& out, std::ostream& err);
int run_plot(const PlotOptions& o, std::ostream& out, std::ostream& err);

}  // namespace vm3ac::cli
