#include "sttm/commands.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm::cli {

namespace {

std::ostream& null_stream() {
  static std::ofstream sink;
  return sink;
}

std::ostream& out_of(const Context& ctx) { return ctx.out != nullptr ? *ctx.out : null_stream(); }

std::string iso_time(sim::Timestamp t) {
  const std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M", &tm);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto partial = path.string() + ".partial";
  {
    std::ofstream out(partial);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
  }
  std::filesystem::rename(partial, path);
}

std::string config_sidecar(const std::filesystem::path& path) { return path.string() + ".config"; }
std::string weather_sidecar(const std::filesystem::path& path) { return path.string() + ".weather"; }

// The event log's own resolved config fixes the simulated horizon.
RunConfig simulated_config(const std::filesystem::path& events) {
  const auto sidecar = config_sidecar(events);
  if (!std::filesystem::exists(sidecar)) {
    throw CompatibilityError(events.string() + " has no resolved config at " + sidecar + "; rerun simulate");
  }
  return load_config(sidecar);
}

features::Horizon horizon_of(const sim::SimConfig& sim) {
  return {sim.start_time - sim.start_time % sim::kSecondsPerDay, sim.days};
}

features::Dataset load_dataset(const RunConfig& config, const Context& ctx) {
  const auto path = ctx.resolve(config.paths.dataset);
  if (!std::filesystem::exists(path)) throw ConfigError("no dataset at " + path.string() + "; run featurize first");
  auto dataset = features::Dataset::load(path.string());
  if (dataset.config().hash() != config.features.hash()) {
    throw CompatibilityError("features.* settings differ from those " + path.string() + " was built with");
  }
  return dataset;
}

void write_reports(const Context& ctx, const RunConfig& config, const std::string& name, const std::string& table,
                   const std::string& records) {
  const auto dir = ctx.resolve(config.paths.reports);
  write_text(dir / (name + ".csv"), table);
  write_text(dir / (name + ".config"), format_config(config));
  if (!records.empty()) write_text(dir / (name + ".jsonl"), records);
}

}  // namespace

void simulate(const RunConfig& config, const Context& ctx) {
  config.sim.validate();
  auto& out = out_of(ctx);
  std::filesystem::create_directories(ctx.workdir);
  const auto districts = sim::generate_districts(config.sim);
  const auto result = sim::simulate(config.sim, districts);
  const auto events = ctx.resolve(config.paths.events);
  sim::write_events(events.string(), result.events);
  geo::write_districts(ctx.resolve(config.paths.districts).string(), districts);
  sim::write_weather(weather_sidecar(events), result.calendar);
  write_text(config_sidecar(events), format_config(config));
  out << "districts " << districts.size() << "\n";
  out << "events " << result.events.size() << "\n";
  out << "weather_windows " << result.calendar.windows().size() << "\n";
  out << "events_fingerprint " << to_hex(hash_file(events.string())) << "\n";
}

std::string split_summary(const features::Dataset& dataset) {
  std::ostringstream ss;
  ss << "split samples districts first_sample last_sample\n";
  for (features::Split s : {features::Split::kTrain, features::Split::kValidation, features::Split::kTest}) {
    const auto idx = dataset.split_indices(s);
    ss << features::to_string(s) << ' ' << idx.size() << ' ' << dataset.split_district_count(s);
    if (idx.empty()) {
      ss << " - -\n";
      continue;
    }
    sim::Timestamp lo = dataset.records()[idx.front()].sample_time, hi = lo;
    for (std::size_t i : idx) {
      lo = std::min(lo, dataset.records()[i].sample_time);
      hi = std::max(hi, dataset.records()[i].sample_time);
    }
    ss << ' ' << iso_time(lo) << ' ' << iso_time(hi) << '\n';
  }
  return ss.str();
}

void featurize(const RunConfig& config, const Context& ctx) {
  config.features.validate();
  auto& out = out_of(ctx);
  const auto events_path = ctx.resolve(config.paths.events);
  if (!std::filesystem::exists(events_path)) {
    throw ConfigError("no events at " + events_path.string() + "; run simulate first");
  }
  RunConfig resolved = config;
  resolved.sim = simulated_config(events_path).sim;
  const auto events = sim::read_events(events_path.string());
  const auto districts = geo::load_districts(ctx.resolve(config.paths.districts).string());
  const auto calendar = sim::read_weather(weather_sidecar(events_path));

  features::DatasetInputs inputs;
  inputs.events = events;
  inputs.districts = districts;
  inputs.calendar = &calendar;
  inputs.horizon = horizon_of(resolved.sim);
  inputs.config = config.features;
  inputs.events_hash = hash_file(events_path.string());
  const auto dataset = features::Dataset::build(inputs);

  dataset.save(ctx.resolve(config.paths.dataset).string());
  write_text(config_sidecar(ctx.resolve(config.paths.dataset)), format_config(resolved));
  features::write_stats(ctx.resolve(config.paths.stats).string(), dataset.stats());
  const std::string summary = split_summary(dataset);
  write_text(ctx.resolve(config.paths.manifest), summary);
  out << summary;
  out << "dataset_fingerprint " << to_hex(dataset.fingerprint()) << "\n";
}

evaluation::MetricsReport train(const RunConfig& config, const Context& ctx) {
  config.train.validate();
  auto& out = out_of(ctx);
  const auto dataset = load_dataset(config, ctx);
  const auto model_config = evaluation::fit_to_dataset(config.model, dataset);
  model_config.validate();

  model::SttmModel model(model_config, config.seed);
  model.set_label_affine(dataset.stats().label_mean, dataset.stats().label_stddev);
  auto train_config = config.train;
  train_config.seed = config.seed;

  const auto log_path = ctx.resolve(config.paths.train_log);
  std::ofstream log(log_path);
  if (!log) throw ConfigError("cannot write " + log_path.string());
  log << "step,train_mae,val_mae,val_mse,val_amae\n";
  const auto result = training::train(model, dataset, train_config, &log);

  const auto fingerprint = dataset.fingerprint();
  model::save_checkpoint(ctx.resolve(config.paths.checkpoint).string(), model, fingerprint, config.seed);
  write_text(config_sidecar(ctx.resolve(config.paths.checkpoint)), format_config(config));
  auto report = evaluation::evaluate(model, dataset, features::Split::kValidation, train_config.anomaly_threshold);
  out << "parameters " << model.parameter_count() << "\n";
  out << "steps " << result.steps << "\n";
  out << "best_step " << result.best_step << "\n";
  out << "validation_mae " << report.metrics.mae << "\n";
  out << "checkpoint_fingerprint " << to_hex(report.checkpoint_fingerprint) << "\n";
  return report;
}

std::vector<evaluation::MetricsReport> evaluate(const RunConfig& config, const Context& ctx, features::Split split) {
  auto& out = out_of(ctx);
  const auto dataset = load_dataset(config, ctx);
  const auto checkpoint = ctx.resolve(config.paths.checkpoint);
  if (!std::filesystem::exists(checkpoint)) {
    throw ConfigError("no checkpoint at " + checkpoint.string() + "; run train first");
  }
  const auto info = model::read_checkpoint_info(checkpoint.string());
  const auto fingerprint = dataset.fingerprint();
  if (info.dataset_fingerprint != fingerprint) {
    throw CompatibilityError(checkpoint.string() + " was trained on dataset " + to_hex(info.dataset_fingerprint) +
                             ", not " + to_hex(fingerprint));
  }
  auto model = model::load_checkpoint(checkpoint.string(), fingerprint);
  std::vector<evaluation::MetricsReport> reports{
      evaluation::evaluate(model, dataset, split, config.train.anomaly_threshold),
      evaluation::historical_mean_baseline(dataset, split, config.train.anomaly_threshold)};
  const auto table = evaluation::format_table(reports);
  write_reports(ctx, config, "evaluate_" + std::string(features::to_string(split)), table,
                evaluation::format_records(reports));
  out << table;
  return reports;
}

std::vector<evaluation::MetricsReport> ablate(const RunConfig& config, const Context& ctx) {
  auto& out = out_of(ctx);
  const auto dataset = load_dataset(config, ctx);
  auto reports = evaluation::run_ablation(dataset, config.model, config.train, config.seed, ctx.jobs);
  const auto table = evaluation::format_table(reports);
  write_reports(ctx, config, "ablation", table, evaluation::format_records(reports));
  out << table;
  for (const auto& r : reports) {
    if (!r.failure.empty()) out << r.variant << " failed: " << r.failure << "\n";
  }
  return reports;
}

std::vector<evaluation::SweepPoint> sweep(const RunConfig& config, const Context& ctx,
                                          evaluation::SweepParameter parameter, std::vector<std::size_t> values) {
  auto& out = out_of(ctx);
  if (values.empty()) values = evaluation::default_sweep_values(parameter);
  const auto dataset = load_dataset(config, ctx);
  auto points = evaluation::run_sweep(dataset, parameter, values, config.model, config.train, config.seed, ctx.jobs);
  std::vector<evaluation::MetricsReport> reports;
  for (const auto& p : points) reports.push_back(p.report);
  const auto table = evaluation::format_sweep(points);
  write_reports(ctx, config, "sweep_" + std::string(evaluation::to_string(parameter)), table,
                evaluation::format_records(reports));
  out << table;
  for (const auto& p : points) {
    if (!p.report.failure.empty()) out << p.report.variant << " failed: " << p.report.failure << "\n";
  }
  return points;
}

}  // namespace sttm::cli
