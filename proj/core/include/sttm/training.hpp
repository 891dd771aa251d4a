#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sttm/dataset.hpp"
#include "sttm/metrics.hpp"
#include "sttm/model.hpp"

namespace sttm::training {

using numerics::Tensor;

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 512;
  int epochs = 1;
  std::uint64_t seed = 42;
  bool shuffle = true;
  // Validation runs before the first step, every this many steps (0: never in between) and after the last.
  std::size_t validation_every = 20;
  // Keep the parameters with the lowest validation MAE; off reproduces plain last-step training.
  bool select_best = true;
  double clip_norm = 0.0;          // global gradient norm limit; 0 disables
  std::size_t micro_batch = 64;    // samples per forward pass within a batch
  std::size_t max_steps = 0;       // 0: no limit
  double anomaly_threshold = evaluation::kAnomalyThreshold;

  void validate() const;
  std::uint64_t hash() const;
};

// Mean absolute error of predictions [B] against constant labels.
Tensor mae_loss(const Tensor& predictions, const Tensor& labels);

struct LogRecord {
  std::size_t step = 0;
  std::optional<double> train_mae;
  std::optional<evaluation::Metrics> validation;
};

// step,train_mae,val_mae,val_mse,val_amae with empty fields for absent values.
std::string format_log_record(const LogRecord& record);

struct TrainResult {
  std::vector<LogRecord> log;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_validation_mae = 0.0;
};

// Trains in place; with select_best the model ends holding the best-validation parameters.
// Log records are also streamed to `log` when given.
TrainResult train(model::SttmModel& model, const features::Dataset& dataset, const TrainConfig& config,
                  std::ostream* log = nullptr);

}  // namespace sttm::training
