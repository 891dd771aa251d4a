#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "sttm/evaluation.hpp"
#include "sttm/run_config.hpp"

namespace sttm::cli {

struct Context {
  std::filesystem::path workdir = ".";
  std::ostream* out = nullptr;  // progress and summaries; null silences
  std::size_t jobs = 1;

  std::filesystem::path resolve(const std::string& relative) const { return workdir / relative; }
};

// Writes the event log, districts, weather sidecar and the resolved config next to the events.
void simulate(const RunConfig& config, const Context& ctx);

// Builds the dataset from the simulated files; writes dataset, normalization stats and split manifest.
void featurize(const RunConfig& config, const Context& ctx);

// Trains on the dataset and writes the checkpoint and the training log.
evaluation::MetricsReport train(const RunConfig& config, const Context& ctx);

// Scores the stored checkpoint (and the historical-mean baseline) on a split.
std::vector<evaluation::MetricsReport> evaluate(const RunConfig& config, const Context& ctx, features::Split split);

std::vector<evaluation::MetricsReport> ablate(const RunConfig& config, const Context& ctx);

std::vector<evaluation::SweepPoint> sweep(const RunConfig& config, const Context& ctx,
                                          evaluation::SweepParameter parameter, std::vector<std::size_t> values);

// "<split> <samples> <districts> <first> <last>" per split.
std::string split_summary(const features::Dataset& dataset);

}  // namespace sttm::cli
