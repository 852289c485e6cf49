#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace vm3ac::cli;

int main(int argc, char** argv) {
  CLI::App app{"vm3ac: multi-agent actor-critic with shared latent variables"};
  app.require_subcommand(1);
  int code = kOk;

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train one run per configured seed");
  t->add_option("-c,--config", train.config, "YAML run configuration")->required()->check(CLI::ExistingFile);
  t->add_option("--override", train.overrides, "section.key=value, applied before validation");
  t->add_option("--out", train.out, "Output directory (overrides run.output_dir)");
  t->callback([&] { code = run_train(train, std::cout, std::cerr); });

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint deterministically");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  e->add_option("-c,--config", eval.config, "Configuration providing the environment")
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--override", eval.overrides, "section.key=value");
  e->add_option("--mode", eval.mode, "mean_z or shared_seed_z")->capture_default_str();
  e->add_option("--episodes", eval.episodes, "Evaluation episodes")->capture_default_str();
  e->add_option("--seed", eval.seed, "Evaluation seed")->capture_default_str();
  e->add_option("--out", eval.out, "Write a JSON summary here");
  e->callback([&] { code = run_eval(eval, std::cout, std::cerr); });

  TabularOptions tab;
  auto* v = app.add_subcommand("tabular-verify", "Check the tabular operator properties on random games");
  v->add_option("-c,--config", tab.config, "YAML configuration (tabular section)")->check(CLI::ExistingFile);
  v->add_option("--override", tab.overrides, "section.key=value");
  v->add_option("--seed", tab.seed, "Suite seed");
  v->add_option("--trials", tab.trials, "Random games per check");
  v->add_option("--inject-bug", tab.inject_bug, "Deliberate fault: flip_bonus_sign");
  v->add_option("--out", tab.out, "Write a JSON report here");
  v->callback([&] { code = run_tabular_verify(tab, std::cout, std::cerr); });

  ToyOptions toy;
  auto* y = app.add_subcommand("toy", "Train and execute the two-agent meeting task");
  y->add_option("-c,--config", toy.config, "YAML configuration (toy section)")->check(CLI::ExistingFile);
  y->add_option("--override", toy.overrides, "section.key=value");
  y->add_option("--steps", toy.steps, "Gradient steps");
  y->add_option("--lr", toy.lr, "Adam learning rate");
  y->add_option("--seed", toy.seed, "Seed");
  y->add_option("--out", toy.out, "Output directory");
  y->callback([&] { code = run_toy(toy, std::cout, std::cerr); });

  PlotOptions plot;
  auto* p = app.add_subcommand("plot", "Plot metric CSVs as mean with a min-max band");
  p->add_option("csv", plot.csvs, "Metrics CSV files")->required();
  p->add_option("--column", plot.column, "Column to plot")->capture_default_str();
  p->add_option("-o,--out", plot.out, "SVG file")->capture_default_str();
  p->add_option("--bins", plot.bins, "Number of env_step bins")->capture_default_str()->check(CLI::PositiveNumber);
  p->callback([&] { code = run_plot(plot, std::cout, std::cerr); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }
  return code;
}
