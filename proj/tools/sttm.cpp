#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sttm/commands.hpp"
#include "sttm/errors.hpp"

namespace {

struct Options {
  std::string workdir = ".";
  std::string config;
  std::vector<std::string> overrides;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> split;
  std::optional<std::string> out, events, districts;
  std::string parameter = "n";
  std::vector<std::size_t> values;
};

sttm::RunConfig resolve(const Options& o, bool seed_is_sim) {
  sttm::RunConfig config = o.config.empty() ? sttm::RunConfig{} : sttm::load_config(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw sttm::ConfigError("--set expects key=value, got '" + kv + "'");
    sttm::set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) (seed_is_sim ? config.sim.seed : config.seed) = *o.seed;
  if (o.events) config.paths.events = *o.events;
  if (o.districts) config.paths.districts = *o.districts;
  config.validate();
  return config;
}

sttm::features::Split parse_split(const std::string& s) {
  if (s == "train") return sttm::features::Split::kTrain;
  if (s == "validation") return sttm::features::Split::kValidation;
  if (s == "test") return sttm::features::Split::kTest;
  throw sttm::ConfigError("unknown split '" + s + "' (expected train, validation or test)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal delivery pressure forecasting"};
  app.name("sttm");
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, const char* seed_help) {
    sub->add_option("--workdir", o.workdir, "Directory holding inputs and outputs")->capture_default_str();
    sub->add_option("--config", o.config, "Config file of key = value lines");
    sub->add_option("--set", o.overrides, "Override one config key (key=value), repeatable");
    sub->add_option("--seed", o.seed, seed_help);
  };

  auto* simulate = app.add_subcommand("simulate", "Generate districts, weather and the order event log");
  common(simulate, "Simulator seed (sim.seed)");
  simulate->add_option("--out", o.out, "Event log path (paths.events)");
  auto* featurize = app.add_subcommand("featurize", "Aggregate events into the normalized sample dataset");
  common(featurize, "Unused; accepted for symmetry");
  featurize->add_option("--events", o.events, "Event log path (paths.events)");
  featurize->add_option("--districts", o.districts, "District file path (paths.districts)");
  featurize->add_option("--out", o.out, "Dataset path (paths.dataset)");
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  common(train, "Model, dropout and shuffle seed");
  auto* evaluate = app.add_subcommand("evaluate", "Score the checkpoint and the historical-mean baseline");
  common(evaluate, "Unused; the checkpoint fixes the model");
  evaluate->add_option("--split", o.split, "train, validation or test (eval.split)");
  auto* ablate = app.add_subcommand("ablate", "Train and test the full model and each component removal");
  common(ablate, "Seed shared by every arm");
  ablate->add_option("--jobs", o.jobs, "Arms trained in parallel")->capture_default_str();
  auto* sweep = app.add_subcommand("sweep", "Train and test over values of one hyperparameter");
  common(sweep, "Seed shared by every point");
  sweep->add_option("--param", o.parameter, "n, m or l_mem")->capture_default_str();
  sweep->add_option("--values", o.values, "Values to try; defaults to 1..6 or 8..18 for l_mem")->delimiter(',');
  sweep->add_option("--jobs", o.jobs, "Points trained in parallel")->capture_default_str();
  auto* config = app.add_subcommand("config", "Print the resolved configuration");
  common(config, "Model seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    sttm::cli::Context ctx;
    ctx.workdir = o.workdir;
    ctx.out = &std::cout;
    ctx.jobs = std::max<std::size_t>(1, o.jobs);
    if (simulate->parsed()) {
      auto config = resolve(o, true);
      if (o.out) config.paths.events = *o.out;
      sttm::cli::simulate(config, ctx);
    } else if (featurize->parsed()) {
      auto config = resolve(o, false);
      if (o.out) config.paths.dataset = *o.out;
      sttm::cli::featurize(config, ctx);
    } else if (train->parsed()) {
      sttm::cli::train(resolve(o, false), ctx);
    } else if (evaluate->parsed()) {
      const auto config = resolve(o, false);
      sttm::cli::evaluate(config, ctx, o.split ? parse_split(*o.split) : config.eval.split);
    } else if (ablate->parsed()) {
      const auto reports = sttm::cli::ablate(resolve(o, false), ctx);
      for (const auto& r : reports) {
        if (!r.failure.empty()) return 2;
      }
    } else if (sweep->parsed()) {
      const auto points = sttm::cli::sweep(resolve(o, false), ctx,
                                           sttm::evaluation::parse_sweep_parameter(o.parameter), o.values);
      for (const auto& p : points) {
        if (!p.report.failure.empty()) return 2;
      }
    } else if (config->parsed()) {
      std::cout << sttm::format_config(resolve(o, false));
    }
  } catch (const sttm::UserError& e) {
    std::cerr << "sttm: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "sttm: internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
