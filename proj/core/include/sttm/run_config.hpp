#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sttm/dataset.hpp"
#include "sttm/model.hpp"
#include "sttm/simulator.hpp"
#include "sttm/training.hpp"

namespace sttm {

struct Paths {
  std::string events = "events.log";
  std::string districts = "districts.csv";
  std::string dataset = "dataset.bin";
  std::string stats = "stats.txt";
  std::string manifest = "splits.txt";
  std::string checkpoint = "model.ckpt";
  std::string train_log = "train_log.csv";
  std::string reports = "reports";
};

struct EvalConfig {
  features::Split split = features::Split::kTest;  // split scored by `evaluate`
};

struct RunConfig {
  sim::SimConfig sim;
  features::FeatureConfig features;
  model::SttmConfig model;
  training::TrainConfig train;  // eval.anomaly_threshold lives here too, validation reports AMAE
  EvalConfig eval;
  Paths paths;
  std::uint64_t seed = 42;  // model init, dropout and shuffling; sim.seed drives the simulator

  void validate() const;
  // Covers everything except paths.
  std::uint64_t hash() const;
};

// `key = value` lines, `#` comments. Unknown keys and malformed values throw ParseError with the line.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Sets one dotted key; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);
std::vector<std::string> config_keys();

// Every key with its resolved value, parseable by parse_config.
std::string format_config(const RunConfig& config);

}  // namespace sttm
