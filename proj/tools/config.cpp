#include "config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace vm3ac::cli {

namespace {

/// Shortest text that reads back to the same double.
struct Shortest {
  double v;
};

YAML::Emitter& operator<<(YAML::Emitter& out, Shortest d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d.v);
  std::string text(buf, r.ptr);
  if (text.find_first_of(".en") == std::string::npos) text += ".0";
  return out << text;
}

std::string line_of(const YAML::Node& node, const std::string& origin) {
  const auto mark = node.Mark();
  if (mark.line < 0) return origin;
  return origin + ":" + std::to_string(mark.line + 1);
}

/// Reads the keys of one mapping and rejects anything left unread.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, const std::string& origin,
          const std::set<std::string>& overridden)
      : node_(node), path_(std::move(path)), origin_(origin), overridden_(overridden) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) fail(node_, "expected a mapping");
  }

  bool has(const char* key) const { return node_ && node_.IsMap() && node_[key]; }

  YAML::Node child(const char* key) {
    seen_.insert(key);
    return has(key) ? node_[key] : YAML::Node();
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const YAML::Node v = node_[key];
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      fail_key(key, "invalid value");
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const YAML::Node v = node_[key];
    if (v.IsNull()) {
      out.reset();
      return;
    }
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      fail_key(key, "invalid value");
    }
  }

  template <class T, class F>
  void get_as(const char* key, T& out, F convert) {
    std::string raw;
    get(key, raw);
    if (!has(key)) return;
    try {
      out = convert(raw);
    } catch (const std::exception& e) {
      fail_key(key, e.what());
    }
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (seen_.count(key)) continue;
      const std::string name = qualified(key.c_str());
      if (overridden_.count(name)) throw ConfigError("--override " + name + ": unknown key");
      fail(kv.first, "unknown key '" + name + "'");
    }
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& message) const {
    throw ConfigError(line_of(at, origin_) + ": " + message);
  }

  [[noreturn]] void fail_key(const char* key, const std::string& message) const {
    const std::string name = qualified(key);
    if (overridden_.count(name)) throw ConfigError("--override " + name + ": " + message);
    fail(node_[key], "'" + name + "': " + message);
  }

  Section sub(const char* key) {
    return Section(child(key), qualified(key), origin_, overridden_);
  }

 private:
  std::string qualified(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  const std::string& origin_;
  const std::set<std::string>& overridden_;
  std::set<std::string> seen_;
};

void read_environment(Section s, envs::EnvironmentConfig& e, const YAML::Node& node, const std::string& origin) {
  std::string id;
  s.get("id", id);
  if (id.empty()) throw ConfigError(line_of(node, origin) + ": missing required field 'environment.id'");
  try {
    e.kind = envs::env_kind_from_string(id);
  } catch (const std::exception& ex) {
    s.fail_key("id", ex.what());
  }
  switch (e.kind) {
    case envs::EnvKind::toy_meet:
      s.get("meet_distance", e.toy_meet.meet_distance);
      s.get("horizon", e.toy_meet.horizon);
      break;
    case envs::EnvKind::predator_prey: {
      auto& p = e.predator_prey;
      s.get("n_predators", p.n_predators);
      s.get("n_prey", p.n_prey);
      s.get("capture_agents", p.capture_agents);
      s.get("capture_radius", p.capture_radius);
      s.get("arena_half_size", p.arena_half_size);
      s.get("horizon", p.horizon);
      s.get("capture_reward", p.capture_reward);
      s.get("respawn_multiplier", p.respawn_multiplier);
      s.get("velocity_scale", p.velocity_scale);
      break;
    }
    case envs::EnvKind::coop_nav: {
      auto& c = e.coop_nav;
      s.get("n_agents", c.n_agents);
      s.get("n_landmarks", c.n_landmarks);
      s.get("horizon", c.horizon);
      s.get("collision_penalty", c.collision_penalty);
      s.get("occupy_bonus", c.occupy_bonus);
      s.get("occupy_radius", c.occupy_radius);
      s.get("collision_distance", c.collision_distance);
      s.get("arena_half_size", c.arena_half_size);
      s.get("velocity_scale", c.velocity_scale);
      break;
    }
  }
  s.finish();
}

void read_trainer(Section s, core::TrainerConfig& t) {
  s.get_as("variant", t.variant, core::variant_from_string);
  s.get("beta", t.beta);
  s.get("dim_z", t.dim_z);
  s.get("gamma", t.gamma);
  s.get("tau", t.tau);
  s.get("learning_rate", t.learning_rate);
  s.get("batch_size", t.batch_size);
  s.get("buffer_capacity", t.buffer_capacity);
  s.get("hidden", t.hidden);
  s.get("q_sigma", t.q_sigma);
  s.get("shared_variational", t.shared_variational);
  s.get("warmup", t.warmup);
  s.get("updates_per_step", t.updates_per_step);
  s.get("total_env_steps", t.total_env_steps);
  s.get("eval_interval", t.eval_interval);
  s.get("eval_episodes", t.eval_episodes);
  s.get_as("eval_mode", t.eval_mode, core::mode_from_string);
  s.get("log_wall_time", t.log_wall_time);
  s.finish();
}

void read_run(Section s, RunSection& r) {
  s.get("seeds", r.seeds);
  s.get("output_dir", r.output_dir);
  s.get("name", r.name);
  s.finish();
}

void read_tabular(Section s, tabular::SuiteConfig& t) {
  s.get("seed", t.seed);
  s.get("trials", t.trials);
  s.get("max_states", t.max_states);
  s.get("max_actions", t.max_actions);
  s.get("n_agents", t.n_agents);
  s.get("n_latent", t.n_latent);
  s.get("gamma", t.gamma);
  s.get("beta", t.beta);
  s.get("tol", t.tol);
  s.finish();
}

void read_toy(Section s, core::ToyConfig& t) {
  s.get("steps", t.steps);
  s.get("learning_rate", t.learning_rate);
  s.get("noise_std", t.noise_std);
  s.get("z_low", t.z_low);
  s.get("z_high", t.z_high);
  s.get("train_horizon", t.train_horizon);
  s.get("exec_steps", t.exec_steps);
  std::vector<double> z;
  s.get("fixed_z", z);
  if (!z.empty()) {
    if (z.size() != 2) s.fail_key("fixed_z", "needs two values");
    t.fixed_z = {z[0], z[1]};
  }
  s.get("history_every", t.history_every);
  s.finish();
}

void validate(const RunConfig& c, const std::string& origin) {
  const auto bad = [&](const std::string& msg) { throw ConfigError(origin + ": " + msg); };
  const auto& t = c.trainer;
  if (t.gamma < 0.0 || t.gamma > 1.0) bad("trainer.gamma must lie in [0, 1]");
  if (t.tau < 0.0 || t.tau > 1.0) bad("trainer.tau must lie in [0, 1]");
  if (t.batch_size == 0) bad("trainer.batch_size must be positive");
  if (t.buffer_capacity < t.batch_size) bad("trainer.buffer_capacity must be at least trainer.batch_size");
  if (!(t.q_sigma > 0.0)) bad("trainer.q_sigma must be positive");
  if (t.beta && *t.beta < 0.0) bad("trainer.beta must be non-negative");
  if (t.updates_per_step < 0.0) bad("trainer.updates_per_step must be non-negative");
  if (t.eval_episodes == 0) bad("trainer.eval_episodes must be positive");
  if (c.run.seeds.empty()) bad("run.seeds must list at least one seed");
  if (c.tabular.trials == 0) bad("tabular.trials must be at least 1");
  if (c.toy.steps == 0) bad("toy.steps must be at least 1");
}

YAML::Node scalar_or_flow(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("override value '" + text + "': " + e.what());
  }
}

}  // namespace

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + text + "' must have the form section.key=value");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

RunConfig parse_config(const std::string& text, const std::string& origin, const std::vector<Override>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(origin + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) throw ConfigError(origin + ": top level must be a mapping");

  std::set<std::string> overridden;
  for (const auto& o : overrides) {
    overridden.insert(o.key);
    std::vector<std::string> parts;
    std::stringstream ss(o.key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    if (parts.empty() || parts.size() > 2) {
      throw ConfigError("override '" + o.key + "': expected section.key or a top-level key");
    }
    if (parts.size() == 1) {
      root[parts[0]] = scalar_or_flow(o.value);
    } else {
      if (!root[parts[0]]) root[parts[0]] = YAML::Node(YAML::NodeType::Map);
      root[parts[0]][parts[1]] = scalar_or_flow(o.value);
    }
  }

  RunConfig c;
  Section top(root, "", origin, overridden);
  top.get("format_version", c.format_version);
  if (c.format_version != kConfigFormatVersion) {
    top.fail(root["format_version"], "unsupported format_version " + std::to_string(c.format_version) +
                                         " (expected " + std::to_string(kConfigFormatVersion) + ")");
  }
  if (!top.has("environment")) throw ConfigError(origin + ": missing required field 'environment'");
  const YAML::Node env = root["environment"];
  read_environment(top.sub("environment"), c.environment, env, origin);
  read_trainer(top.sub("trainer"), c.trainer);
  read_run(top.sub("run"), c.run);
  read_tabular(top.sub("tabular"), c.tabular);
  read_toy(top.sub("toy"), c.toy);
  top.finish();
  validate(c, origin);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string(), overrides);
}

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "format_version" << YAML::Value << c.format_version;

  out << YAML::Key << "environment" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "id" << YAML::Value << envs::to_string(c.environment.kind);
  switch (c.environment.kind) {
    case envs::EnvKind::toy_meet:
      out << YAML::Key << "meet_distance" << YAML::Value << Shortest{c.environment.toy_meet.meet_distance};
      out << YAML::Key << "horizon" << YAML::Value << c.environment.toy_meet.horizon;
      break;
    case envs::EnvKind::predator_prey: {
      const auto& p = c.environment.predator_prey;
      out << YAML::Key << "n_predators" << YAML::Value << p.n_predators;
      out << YAML::Key << "n_prey" << YAML::Value << p.n_prey;
      out << YAML::Key << "capture_agents" << YAML::Value << p.capture_agents;
      out << YAML::Key << "capture_radius" << YAML::Value << Shortest{p.capture_radius};
      out << YAML::Key << "arena_half_size" << YAML::Value << Shortest{p.arena_half_size};
      out << YAML::Key << "horizon" << YAML::Value << p.horizon;
      out << YAML::Key << "capture_reward" << YAML::Value << Shortest{p.capture_reward};
      out << YAML::Key << "respawn_multiplier" << YAML::Value << Shortest{p.respawn_multiplier};
      out << YAML::Key << "velocity_scale" << YAML::Value << Shortest{p.velocity_scale};
      break;
    }
    case envs::EnvKind::coop_nav: {
      const auto& n = c.environment.coop_nav;
      out << YAML::Key << "n_agents" << YAML::Value << n.n_agents;
      out << YAML::Key << "n_landmarks" << YAML::Value << n.n_landmarks;
      out << YAML::Key << "horizon" << YAML::Value << n.horizon;
      out << YAML::Key << "collision_penalty" << YAML::Value << Shortest{n.collision_penalty};
      out << YAML::Key << "occupy_bonus" << YAML::Value << Shortest{n.occupy_bonus};
      out << YAML::Key << "occupy_radius" << YAML::Value << Shortest{n.occupy_radius};
      out << YAML::Key << "collision_distance" << YAML::Value << Shortest{n.collision_distance};
      out << YAML::Key << "arena_half_size" << YAML::Value << Shortest{n.arena_half_size};
      out << YAML::Key << "velocity_scale" << YAML::Value << Shortest{n.velocity_scale};
      break;
    }
  }
  out << YAML::EndMap;

  const auto& t = c.trainer;
  out << YAML::Key << "trainer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "variant" << YAML::Value << core::to_string(t.variant);
  out << YAML::Key << "beta" << YAML::Value;
  if (t.beta) out << Shortest{*t.beta}; else out << YAML::Null;
  out << YAML::Key << "dim_z" << YAML::Value;
  if (t.dim_z) out << *t.dim_z; else out << YAML::Null;
  out << YAML::Key << "gamma" << YAML::Value << Shortest{t.gamma};
  out << YAML::Key << "tau" << YAML::Value << Shortest{t.tau};
  out << YAML::Key << "learning_rate" << YAML::Value << Shortest{t.learning_rate};
  out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  out << YAML::Key << "buffer_capacity" << YAML::Value << t.buffer_capacity;
  out << YAML::Key << "hidden" << YAML::Value << YAML::Flow << t.hidden;
  out << YAML::Key << "q_sigma" << YAML::Value << Shortest{t.q_sigma};
  out << YAML::Key << "shared_variational" << YAML::Value << t.shared_variational;
  out << YAML::Key << "warmup" << YAML::Value << t.warmup;
  out << YAML::Key << "updates_per_step" << YAML::Value << Shortest{t.updates_per_step};
  out << YAML::Key << "total_env_steps" << YAML::Value << t.total_env_steps;
  out << YAML::Key << "eval_interval" << YAML::Value << t.eval_interval;
  out << YAML::Key << "eval_episodes" << YAML::Value << t.eval_episodes;
  out << YAML::Key << "eval_mode" << YAML::Value << core::to_string(t.eval_mode);
  out << YAML::Key << "log_wall_time" << YAML::Value << t.log_wall_time;
  out << YAML::EndMap;

  out << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.run.seeds;
  out << YAML::Key << "output_dir" << YAML::Value << c.run.output_dir;
  out << YAML::Key << "name" << YAML::Value << c.run.name;
  out << YAML::EndMap;

  const auto& s = c.tabular;
  out << YAML::Key << "tabular" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << s.seed;
  out << YAML::Key << "trials" << YAML::Value << s.trials;
  out << YAML::Key << "max_states" << YAML::Value << s.max_states;
  out << YAML::Key << "max_actions" << YAML::Value << s.max_actions;
  out << YAML::Key << "n_agents" << YAML::Value << s.n_agents;
  out << YAML::Key << "n_latent" << YAML::Value << s.n_latent;
  out << YAML::Key << "gamma" << YAML::Value << Shortest{s.gamma};
  out << YAML::Key << "beta" << YAML::Value << Shortest{s.beta};
  out << YAML::Key << "tol" << YAML::Value << Shortest{s.tol};
  out << YAML::EndMap;

  const auto& y = c.toy;
  out << YAML::Key << "toy" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << y.steps;
  out << YAML::Key << "learning_rate" << YAML::Value << Shortest{y.learning_rate};
  out << YAML::Key << "noise_std" << YAML::Value << Shortest{y.noise_std};
  out << YAML::Key << "z_low" << YAML::Value << Shortest{y.z_low};
  out << YAML::Key << "z_high" << YAML::Value << Shortest{y.z_high};
  out << YAML::Key << "train_horizon" << YAML::Value << y.train_horizon;
  out << YAML::Key << "exec_steps" << YAML::Value << y.exec_steps;
  out << YAML::Key << "fixed_z" << YAML::Value << YAML::Flow << YAML::BeginSeq << Shortest{y.fixed_z[0]}
      << Shortest{y.fixed_z[1]} << YAML::EndSeq;
  out << YAML::Key << "history_every" << YAML::Value << y.history_every;
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

nlohmann::json to_json(const RunConfig& c) {
  // The YAML rendering is the single source of field names.
  const std::function<nlohmann::json(const YAML::Node&)> convert = [&](const YAML::Node& n) -> nlohmann::json {
    if (n.IsMap()) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& kv : n) j[kv.first.as<std::string>()] = convert(kv.second);
      return j;
    }
    if (n.IsSequence()) {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& v : n) j.push_back(convert(v));
      return j;
    }
    if (n.IsNull()) return nullptr;
    const std::string s = n.Scalar();
    if (n.Tag() == "!") return s;
    bool b;
    if (YAML::convert<bool>::decode(n, b) && (s == "true" || s == "false")) return b;
    long long i;
    std::size_t pos = 0;
    try {
      i = std::stoll(s, &pos);
      if (pos == s.size()) return i;
    } catch (const std::exception&) {
    }
    try {
      const double d = std::stod(s, &pos);
      if (pos == s.size()) return d;
    } catch (const std::exception&) {
    }
    return s;
  };
  return convert(YAML::Load(to_yaml(c)));
}

std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("VM3AC_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace vm3ac::cli
