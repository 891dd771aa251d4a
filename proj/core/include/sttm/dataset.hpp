#pragma once

// Sample assembly over a (district, time) grid, chronological splits and the
// on-disk dataset.
//
// A dataset stores each district's normalized slice features once, on a
// 5-minute grid, and each sample as a reference into that table. Batches are
// gathered from the table, so the M x N x 31 block of a sample is never stored
// twice.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sttm/features.hpp"

namespace sttm::features {

struct Schedule {
  int first_minute = 600;   // first sample tick of each day
  int last_minute = 1315;   // last sample tick of each day
  int step_minutes = 5;     // tick cadence
  int slice_minutes = 10;   // spacing of the N slices ending at a tick
};

struct SplitDays {
  int train = 14;
  int validation = 1;
  int test = 3;
};

struct Horizon {
  Timestamp start = 0;  // midnight of the first simulated day
  int days = 0;
};

struct FeatureConfig {
  std::size_t m = 10;
  std::size_t n = 6;
  int nx = 10;
  int ny = 10;
  Schedule schedule;
  SplitDays split;

  void validate() const;
  std::uint64_t hash() const;
};

enum class Split : std::uint8_t { kTrain = 0, kValidation = 1, kTest = 2 };
std::string_view to_string(Split s);

struct SplitBoundaries {
  Timestamp validation_start = 0;
  Timestamp test_start = 0;
  Timestamp end = 0;
};

SplitBoundaries split_boundaries(const Horizon& horizon, const SplitDays& days);
Split split_of(Timestamp sample_time, const SplitBoundaries& b);

// Sample ticks (district independent) over the horizon, chronological.
std::vector<Timestamp> schedule_ticks(const Horizon& horizon, const Schedule& schedule);

struct SplitSamples {
  std::vector<Sample> train, validation, test;
};
SplitSamples split_dataset(std::vector<Sample> samples, const SplitBoundaries& b);

// Raw (unnormalized) samples, one per (district, tick) with a defined label.
std::vector<Sample> assemble_samples(std::span<const OrderEvent> events, std::span<const geo::DistrictGeo> districts,
                                     const sim::RegimeCalendar& calendar, const Horizon& horizon,
                                     const FeatureConfig& config);

struct SampleRecord {
  DistrictId district_id = 0;
  Timestamp sample_time = 0;
  std::uint32_t district_index = 0;
  Split split = Split::kTrain;
  SensitiveIds x_b{};
  double label = 0.0;
};

// Row-major model input for a batch of samples.
struct SampleBatch {
  std::size_t size = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> x_a;            // [size][m][n][31]
  std::vector<std::int64_t> rel_x;    // [size][m]
  std::vector<std::int64_t> rel_y;    // [size][m]
  std::vector<std::int64_t> sensitive;  // [size][6]
  std::vector<double> labels;         // [size]
};

struct DatasetInputs {
  std::span<const OrderEvent> events;
  std::span<const geo::DistrictGeo> districts;
  const sim::RegimeCalendar* calendar = nullptr;
  Horizon horizon;
  FeatureConfig config;
  std::uint64_t events_hash = 0;
};

class Dataset {
 public:
  static Dataset build(const DatasetInputs& inputs);
  static Dataset load(const std::string& path);
  void save(const std::string& path) const;

  const FeatureConfig& config() const noexcept { return config_; }
  const Horizon& horizon() const noexcept { return horizon_; }
  const NormalizationStats& stats() const noexcept { return stats_; }
  const Vocabulary& vocabulary() const noexcept { return vocabulary_; }
  const std::vector<SampleRecord>& records() const noexcept { return records_; }
  const std::vector<DistrictId>& district_ids() const noexcept { return district_ids_; }
  std::uint64_t events_hash() const noexcept { return events_hash_; }

  std::vector<std::size_t> split_indices(Split split) const;
  std::size_t split_size(Split split) const;
  std::size_t split_district_count(Split split) const;

  // Normalized feature row of a district at a grid time.
  std::span<const double> row(std::size_t district_index, Timestamp t) const;
  // Normalized sample restricted to the first m districts and last n slices.
  Sample materialize(std::size_t record, std::size_t m, std::size_t n) const;
  Sample materialize(std::size_t record) const { return materialize(record, config_.m, config_.n); }
  void gather(std::span<const std::size_t> records, std::size_t m, std::size_t n, SampleBatch& out) const;

  // Content hash over header and payload; identifies the dataset in checkpoints.
  std::uint64_t fingerprint() const;

 private:
  std::size_t grid_index(Timestamp t) const;

  FeatureConfig config_;
  Horizon horizon_;
  std::uint64_t events_hash_ = 0;
  NormalizationStats stats_;
  Vocabulary vocabulary_;
  std::vector<DistrictId> district_ids_;               // sorted
  std::vector<std::vector<std::uint32_t>> neighbors_;  // [district][m], self first
  std::vector<std::vector<geo::RelativeCoord>> coords_;
  int grid_origin_minute_ = 0;
  std::size_t grid_per_day_ = 0;
  std::vector<double> table_;  // [district][grid][31]
  std::vector<SampleRecord> records_;
};

}  // namespace sttm::features
