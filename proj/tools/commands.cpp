#include "commands.hpp"

#include <cstdio>
#include <fstream>

#include "plot.hpp"
#include "vm3ac/core/toy.hpp"
#include "vm3ac/core/trainer.hpp"
#include "vm3ac/tabular/tabular.hpp"

namespace vm3ac::cli {

namespace fs = std::filesystem;

namespace {

std::vector<Override> parse_overrides(const std::vector<std::string>& raw) {
  std::vector<Override> out;
  for (const auto& r : raw) out.push_back(parse_override(r));
  return out;
}

RunConfig config_or_default(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  if (path) return load_config(*path, parse_overrides(overrides));
  // Sections other than environment are optional; a placeholder id keeps
  // the parser's required-field check satisfied.
  return parse_config("environment: {id: toy_meet}\n", "<defaults>", parse_overrides(overrides));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot write");
  f << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json mat_json(const core::Mat2& m) { return {{m[0], m[1]}, {m[2], m[3]}}; }

std::string trajectory_csv(const core::ToyTrajectory& t) {
  std::string s = "step,x1,y1,x2,y2,distance\n";
  for (std::size_t k = 0; k < t.distance.size(); ++k) {
    s += std::to_string(k) + "," + fmt(t.agent1[k][0]) + "," + fmt(t.agent1[k][1]) + "," + fmt(t.agent2[k][0]) + "," +
         fmt(t.agent2[k][1]) + "," + fmt(t.distance[k]) + "\n";
  }
  return s;
}

template <class F>
int guarded(std::ostream& err, F body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int run_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(o.config, parse_overrides(o.overrides));
    const fs::path root = o.out ? *o.out : resolve_output_dir(config.run.output_dir) / config.run.name;
    fs::create_directories(root);
    write_text(root / "config.resolved.yaml", to_yaml(config));
    const nlohmann::json embedded = to_json(config);
    for (const auto seed : config.run.seeds) {
      const fs::path dir = root / ("seed" + std::to_string(seed));
      fs::create_directories(dir);
      core::RunOutputs outputs;
      outputs.metrics_csv = dir / "metrics.csv";
      outputs.metrics_jsonl = dir / "metrics.jsonl";
      outputs.checkpoint = dir / "checkpoint";
      outputs.run_id = config.run.name + "-seed" + std::to_string(seed);
      outputs.config = embedded;
      out << "training " << outputs.run_id << " (" << envs::to_string(config.environment.kind) << ", "
          << core::to_string(config.trainer.variant) << ")\n";
      const auto result = core::train_run(config.trainer, config.environment, seed, &outputs);
      out << "  episodes " << result.episodes.size() << ", gradient steps " << result.gradient_steps
          << ", final mean_z return " << result.final_mean_z.mean_return << ", shared_seed_z return "
          << result.final_shared_seed_z.mean_return << "\n";
    }
    out << "outputs in " << root.string() << "\n";
    return kOk;
  });
}

int run_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = load_config(o.config, parse_overrides(o.overrides));
    const auto mode = core::mode_from_string(o.mode);
    if (o.episodes == 0) throw std::invalid_argument("--episodes must be at least 1");
    auto env = envs::make_environment(config.environment);
    const auto r = core::evaluate_checkpoint(o.checkpoint, *env, mode, o.episodes, o.seed);
    for (std::size_t k = 0; k < r.per_agent_return.size(); ++k) {
      out << "agent " << k << " return " << r.per_agent_return[k] << "\n";
    }
    out << "mean return " << r.mean_return << " over " << r.episodes << " episodes (" << core::to_string(mode)
        << ")\n";
    if (o.out) {
      nlohmann::json j = core::to_json(r);
      j["format_version"] = core::kMetricsFormatVersion;
      j["checkpoint"] = o.checkpoint.string();
      j["environment"] = envs::to_string(config.environment.kind);
      j["seed"] = o.seed;
      write_text(*o.out, j.dump(2) + "\n");
    }
    return kOk;
  });
}

int run_tabular_verify(const TabularOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = config_or_default(o.config, o.overrides);
    auto suite = config.tabular;
    if (o.seed) suite.seed = *o.seed;
    if (o.trials) suite.trials = *o.trials;
    if (suite.trials == 0) throw std::invalid_argument("--trials must be at least 1");
    if (o.inject_bug == "flip_bonus_sign") {
      suite.fault = tabular::BellmanFault::flip_bonus_sign;
    } else if (!o.inject_bug.empty() && o.inject_bug != "none") {
      throw std::invalid_argument("unknown --inject-bug '" + o.inject_bug + "' (expected flip_bonus_sign)");
    }
    const auto report = tabular::run_suite(suite);
    nlohmann::json j = {{"format_version", kConfigFormatVersion},
                        {"seed", suite.seed},
                        {"trials", suite.trials},
                        {"inject_bug", o.inject_bug.empty() ? "none" : o.inject_bug},
                        {"passed", report.passed()},
                        {"checks", nlohmann::json::array()}};
    for (const auto& c : report.checks) {
      out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.cases << " cases, " << c.failures
          << " failures, worst " << c.worst;
      if (!c.detail.empty()) out << " (" << c.detail << ")";
      out << "\n";
      j["checks"].push_back({{"name", c.name},
                             {"passed", c.passed},
                             {"cases", c.cases},
                             {"failures", c.failures},
                             {"worst", c.worst},
                             {"detail", c.detail}});
    }
    if (o.out) write_text(*o.out, j.dump(2) + "\n");
    out << (report.passed() ? "tabular verification passed" : "tabular verification FAILED") << "\n";
    return report.passed() ? kOk : kFailure;
  });
}

int run_toy(const ToyOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig config = config_or_default(o.config, o.overrides);
    auto toy = config.toy;
    if (o.steps) toy.steps = *o.steps;
    if (o.lr) toy.learning_rate = *o.lr;
    if (toy.steps == 0) throw std::invalid_argument("--steps must be at least 1");
    if (!(toy.learning_rate > 0.0)) throw std::invalid_argument("--lr must be positive");
    const std::uint64_t seed = o.seed ? *o.seed : config.run.seeds.front();
    const fs::path dir = o.out ? *o.out : resolve_output_dir(config.run.output_dir) / "toy";
    fs::create_directories(dir);

    const auto result = core::train_toy(toy, seed);
    auto rng = core::stream_rng(seed, 6);
    const auto cov = core::covariance_check(result.w1, result.w2, 100000, toy, rng);

    write_text(dir / "trajectory_random_z.csv", trajectory_csv(result.random_z));
    write_text(dir / "trajectory_fixed_z.csv", trajectory_csv(result.fixed_z));
    std::string history = "step,w1_11,w1_12,w1_21,w1_22,w2_11,w2_12,w2_21,w2_22\n";
    for (const auto& [step, w] : result.history) {
      history += std::to_string(step);
      for (double v : w.first) history += "," + fmt(v);
      for (double v : w.second) history += "," + fmt(v);
      history += "\n";
    }
    write_text(dir / "weights.csv", history);

    const auto traj = [](const core::ToyTrajectory& t) {
      return nlohmann::json{{"met", t.met},
                            {"meet_step", t.met ? nlohmann::json(t.meet_step) : nlohmann::json(nullptr)},
                            {"final_distance", t.distance.empty() ? 0.0 : t.distance.back()}};
    };
    const nlohmann::json report = {{"format_version", kConfigFormatVersion},
                                   {"seed", seed},
                                   {"steps", toy.steps},
                                   {"learning_rate", toy.learning_rate},
                                   {"w1", mat_json(result.w1)},
                                   {"w2", mat_json(result.w2)},
                                   {"sign_pattern", result.sign_pattern},
                                   {"random_z", traj(result.random_z)},
                                   {"fixed_z", traj(result.fixed_z)},
                                   {"covariance",
                                    {{"sample", mat_json(cov.sample)},
                                     {"expected", mat_json(cov.expected)},
                                     {"standard_error", mat_json(cov.standard_error)},
                                     {"worst_z", cov.worst_z}}}};
    write_text(dir / "report.json", report.dump(2) + "\n");

    out << "W1 = [[" << result.w1[0] << ", " << result.w1[1] << "], [" << result.w1[2] << ", " << result.w1[3]
        << "]]\n";
    out << "W2 = [[" << result.w2[0] << ", " << result.w2[1] << "], [" << result.w2[2] << ", " << result.w2[3]
        << "]]\n";
    out << "sign pattern " << (result.sign_pattern ? "holds" : "does not hold") << "\n";
    out << "random z: " << (result.random_z.met ? "met" : "did not meet") << ", fixed z: "
        << (result.fixed_z.met ? "met at step " + std::to_string(result.fixed_z.meet_step) : "did not meet")
        << "\n";
    out << "covariance worst deviation " << cov.worst_z << " standard errors\n";
    out << "outputs in " << dir.string() << "\n";
    return kOk;
  });
}

int run_plot(const PlotOptions& o, std::ostream& out, std::ostream& err) {
  try {
    if (o.csvs.empty()) throw std::invalid_argument("no metrics CSV given");
    if (!plot_metrics(o.csvs, o.column, o.out, o.bins)) {
      out << "no data rows; nothing written\n";
      return kOk;
    }
    out << "wrote " << o.out.string() << "\n";
    return kOk;
  } catch (const PlotError& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace vm3ac::cli
