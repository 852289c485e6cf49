#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vm3ac/core/toy.hpp"
#include "vm3ac/core/trainer.hpp"
#include "vm3ac/envs/environment.hpp"
#include "vm3ac/tabular/tabular.hpp"

namespace vm3ac::cli {

inline constexpr int kConfigFormatVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunSection {
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "runs";
  std::string name = "run";
};

struct RunConfig {
  int format_version = kConfigFormatVersion;
  envs::EnvironmentConfig environment;
  core::TrainerConfig trainer;
  RunSection run;
  tabular::SuiteConfig tabular;
  core::ToyConfig toy;
};

/// `key=value` with a dotted key such as `trainer.beta`; the value is read
/// as a YAML scalar or flow sequence.
struct Override {
  std::string key;
  std::string value;
};
Override parse_override(const std::string& text);

/// Parses YAML text. `origin` prefixes diagnostics ("origin:line: ...").
/// Overrides are applied to the document before validation.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                       const std::vector<Override>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {});

/// Full YAML rendering with every field present; parse_config reads it back
/// to an identical RunConfig.
std::string to_yaml(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);

/// Output directory after applying VM3AC_OUTPUT_ROOT to a relative path.
std::filesystem::path resolve_output_dir(const std::string& dir);

}  // namespace vm3ac::cli
