#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sttm/dataset.hpp"
#include "sttm/metrics.hpp"
#include "sttm/model.hpp"
#include "sttm/training.hpp"

namespace sttm::evaluation {

struct MetricsReport {
  std::string variant;  // row label: model variant, sweep point or baseline
  std::string split;
  Metrics metrics;
  std::uint64_t config_fingerprint = 0;
  std::uint64_t checkpoint_fingerprint = 0;
  std::uint64_t data_fingerprint = 0;
  std::size_t parameter_count = 0;
  std::string failure;  // non-empty when the arm aborted; metrics are then meaningless

  // Identifies the (config, checkpoint, data) triple.
  std::uint64_t fingerprint() const;
};

MetricsReport evaluate(model::SttmModel& model, const features::Dataset& dataset, features::Split split,
                       double anomaly_threshold = kAnomalyThreshold);

// Forecasts each sample with its district's mean training label (global mean for unseen districts).
MetricsReport historical_mean_baseline(const features::Dataset& dataset, features::Split split,
                                       double anomaly_threshold = kAnomalyThreshold);

// Copies the dataset's vocabulary sizes and coordinate grid into a model config;
// throws ConfigError when m or n exceed what the dataset holds.
model::SttmConfig fit_to_dataset(model::SttmConfig config, const features::Dataset& dataset);

struct ArmSpec {
  std::string name;
  model::SttmConfig model;
  training::TrainConfig train;
};

// Trains and tests one configuration from scratch. Training failures are reported, not thrown.
MetricsReport run_arm(const features::Dataset& dataset, const ArmSpec& arm, std::uint64_t seed);

// Arms run on up to `jobs` threads; results keep the input order.
std::vector<MetricsReport> run_arms(const features::Dataset& dataset, const std::vector<ArmSpec>& arms,
                                    std::uint64_t seed, std::size_t jobs);

// Full model plus the five single-component removals, identical seed and data.
std::vector<MetricsReport> run_ablation(const features::Dataset& dataset, const model::SttmConfig& base,
                                        const training::TrainConfig& train, std::uint64_t seed,
                                        std::size_t jobs = 1);

enum class SweepParameter { kN, kM, kMemoryPatterns };
std::string_view to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(std::string_view name);
std::vector<std::size_t> default_sweep_values(SweepParameter p);

struct SweepPoint {
  SweepParameter parameter = SweepParameter::kN;
  std::size_t value = 0;
  MetricsReport report;
};

std::vector<SweepPoint> run_sweep(const features::Dataset& dataset, SweepParameter parameter,
                                  const std::vector<std::size_t>& values, const model::SttmConfig& base,
                                  const training::TrainConfig& train, std::uint64_t seed, std::size_t jobs = 1);

// variant,mae,mse,amae,n_samples,n_anomaly
std::string format_table(const std::vector<MetricsReport>& reports);
// One JSON object per line.
std::string format_records(const std::vector<MetricsReport>& reports);
// parameter,value,mae,mse,amae,n_samples,n_anomaly
std::string format_sweep(const std::vector<SweepPoint>& points);

}  // namespace sttm::evaluation
