#include "sttm/evaluation.hpp"

#include <atomic>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm::evaluation {

namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string optional_number(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

std::string metrics_columns(const Metrics& m) {
  return number(m.mae) + "," + number(m.mse) + "," + optional_number(m.amae) + "," + std::to_string(m.n_samples) +
         "," + std::to_string(m.n_anomaly);
}

}  // namespace

std::uint64_t MetricsReport::fingerprint() const {
  Fnv1a h;
  h.update(config_fingerprint);
  h.update(checkpoint_fingerprint);
  h.update(data_fingerprint);
  return h.digest();
}

MetricsReport evaluate(model::SttmModel& model, const features::Dataset& dataset, features::Split split,
                       double anomaly_threshold) {
  const auto records = dataset.split_indices(split);
  if (records.empty()) throw ContractError("evaluate: " + std::string(features::to_string(split)) + " split is empty");
  MetricsReport r;
  r.variant = std::string(model::to_string(model.config().variant));
  r.split = std::string(features::to_string(split));
  r.metrics = compute_metrics(predict_records(model, dataset, records), labels_of(dataset, records), anomaly_threshold);
  r.config_fingerprint = model.config().hash();
  r.checkpoint_fingerprint = model::parameter_fingerprint(model);
  r.data_fingerprint = dataset.fingerprint();
  r.parameter_count = model.parameter_count();
  return r;
}

MetricsReport historical_mean_baseline(const features::Dataset& dataset, features::Split split,
                                       double anomaly_threshold) {
  std::map<features::DistrictId, std::pair<double, std::size_t>> sums;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& rec : dataset.records()) {
    if (rec.split != features::Split::kTrain) continue;
    auto& [s, c] = sums[rec.district_id];
    s += rec.label;
    ++c;
    total += rec.label;
    ++count;
  }
  if (count == 0) throw ContractError("historical mean baseline needs training samples");
  const double global = total / static_cast<double>(count);
  const auto records = dataset.split_indices(split);
  std::vector<double> predictions;
  for (std::size_t i : records) {
    const auto it = sums.find(dataset.records()[i].district_id);
    predictions.push_back(it == sums.end() ? global : it->second.first / static_cast<double>(it->second.second));
  }
  MetricsReport r;
  r.variant = "historical_mean";
  r.split = std::string(features::to_string(split));
  r.metrics = compute_metrics(predictions, labels_of(dataset, records), anomaly_threshold);
  r.data_fingerprint = dataset.fingerprint();
  return r;
}

model::SttmConfig fit_to_dataset(model::SttmConfig config, const features::Dataset& dataset) {
  const auto& fc = dataset.config();
  if (config.m > fc.m) {
    throw ConfigError("model.m = " + std::to_string(config.m) + " exceeds the dataset's m = " + std::to_string(fc.m));
  }
  if (config.n > fc.n) {
    throw ConfigError("model.n = " + std::to_string(config.n) + " exceeds the dataset's n = " + std::to_string(fc.n));
  }
  config.nx = fc.nx;
  config.ny = fc.ny;
  config.vocab = dataset.vocabulary().sizes();
  return config;
}

MetricsReport run_arm(const features::Dataset& dataset, const ArmSpec& arm, std::uint64_t seed) {
  MetricsReport r;
  r.variant = arm.name;
  r.split = "test";
  try {
    model::SttmModel model(arm.model, seed);
    model.set_label_affine(dataset.stats().label_mean, dataset.stats().label_stddev);
    training::TrainConfig train = arm.train;
    train.seed = seed;
    training::train(model, dataset, train);
    r = evaluate(model, dataset, features::Split::kTest, train.anomaly_threshold);
    r.variant = arm.name;
  } catch (const Error& e) {
    r.failure = e.what();
    r.config_fingerprint = arm.model.hash();
  }
  return r;
}

std::vector<MetricsReport> run_arms(const features::Dataset& dataset, const std::vector<ArmSpec>& arms,
                                    std::uint64_t seed, std::size_t jobs) {
  std::vector<MetricsReport> out(arms.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < arms.size(); i = next++) out[i] = run_arm(dataset, arms[i], seed);
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, arms.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

std::vector<MetricsReport> run_ablation(const features::Dataset& dataset, const model::SttmConfig& base,
                                        const training::TrainConfig& train, std::uint64_t seed, std::size_t jobs) {
  std::vector<ArmSpec> arms;
  for (model::Variant v : model::kAllVariants) {
    ArmSpec arm{std::string(model::to_string(v)), fit_to_dataset(base, dataset), train};
    arm.model.variant = v;
    arms.push_back(std::move(arm));
  }
  return run_arms(dataset, arms, seed, jobs);
}

std::string_view to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::kN: return "n";
    case SweepParameter::kM: return "m";
    case SweepParameter::kMemoryPatterns: return "l_mem";
  }
  return "?";
}

SweepParameter parse_sweep_parameter(std::string_view name) {
  if (name == "n" || name == "N") return SweepParameter::kN;
  if (name == "m" || name == "M") return SweepParameter::kM;
  if (name == "l_mem" || name == "L_mem") return SweepParameter::kMemoryPatterns;
  throw ConfigError("unknown sweep parameter '" + std::string(name) + "' (expected n, m or l_mem)");
}

std::vector<std::size_t> default_sweep_values(SweepParameter p) {
  if (p == SweepParameter::kMemoryPatterns) return {8, 10, 12, 14, 16, 18};
  return {1, 2, 3, 4, 5, 6};
}

std::vector<SweepPoint> run_sweep(const features::Dataset& dataset, SweepParameter parameter,
                                  const std::vector<std::size_t>& values, const model::SttmConfig& base,
                                  const training::TrainConfig& train, std::uint64_t seed, std::size_t jobs) {
  std::vector<ArmSpec> arms;
  for (std::size_t v : values) {
    ArmSpec arm{std::string(to_string(parameter)) + "=" + std::to_string(v), base, train};
    switch (parameter) {
      case SweepParameter::kN: arm.model.n = v; break;
      case SweepParameter::kM: arm.model.m = v; break;
      case SweepParameter::kMemoryPatterns: arm.model.mem_patterns = v; break;
    }
    arm.model = fit_to_dataset(arm.model, dataset);
    arm.model.validate();
    arms.push_back(std::move(arm));
  }
  const auto reports = run_arms(dataset, arms, seed, jobs);
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < values.size(); ++i) out.push_back({parameter, values[i], reports[i]});
  return out;
}

std::string format_table(const std::vector<MetricsReport>& reports) {
  std::string out = "variant,mae,mse,amae,n_samples,n_anomaly\n";
  for (const auto& r : reports) {
    if (!r.failure.empty()) {
      out += r.variant + ",,,,,\n";
      continue;
    }
    out += r.variant + "," + metrics_columns(r.metrics) + "\n";
  }
  return out;
}

std::string format_records(const std::vector<MetricsReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["split"] = r.split;
    if (r.failure.empty()) {
      j["mae"] = r.metrics.mae;
      j["mse"] = r.metrics.mse;
      j["amae"] = r.metrics.amae ? nlohmann::ordered_json(*r.metrics.amae) : nlohmann::ordered_json(nullptr);
      j["n_samples"] = r.metrics.n_samples;
      j["n_anomaly"] = r.metrics.n_anomaly;
    } else {
      j["failure"] = r.failure;
    }
    j["parameter_count"] = r.parameter_count;
    j["config_fingerprint"] = to_hex(r.config_fingerprint);
    j["checkpoint_fingerprint"] = to_hex(r.checkpoint_fingerprint);
    j["data_fingerprint"] = to_hex(r.data_fingerprint);
    j["report_fingerprint"] = to_hex(r.fingerprint());
    out += j.dump() + "\n";
  }
  return out;
}

std::string format_sweep(const std::vector<SweepPoint>& points) {
  std::string out = "parameter,value,mae,mse,amae,n_samples,n_anomaly\n";
  for (const auto& p : points) {
    out += std::string(to_string(p.parameter)) + "," + std::to_string(p.value) + ",";
    out += p.report.failure.empty() ? metrics_columns(p.report.metrics) : std::string(",,,,");
    out += "\n";
  }
  return out;
}

}  // namespace sttm::evaluation
