#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sttm/dataset.hpp"
#include "sttm/model.hpp"

namespace sttm::evaluation {

// Labels at or above this many minutes count as anomalous.
inline constexpr double kAnomalyThreshold = 40.0;

struct Metrics {
  std::size_t n_samples = 0;
  std::size_t n_anomaly = 0;
  double mae = 0.0;
  double mse = 0.0;
  std::optional<double> amae;  // absent when no label reaches the threshold
};

// Throws ContractError on empty or mismatched inputs.
Metrics compute_metrics(std::span<const double> predictions, std::span<const double> labels,
                        double anomaly_threshold = kAnomalyThreshold);

// Inference-mode forecasts for dataset records, gathered with the model's m and n.
std::vector<double> predict_records(model::SttmModel& model, const features::Dataset& dataset,
                                    std::span<const std::size_t> records, std::size_t chunk = 256);

std::vector<double> labels_of(const features::Dataset& dataset, std::span<const std::size_t> records);

}  // namespace sttm::evaluation
