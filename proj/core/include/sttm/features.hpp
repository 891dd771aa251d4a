#pragma once

// Windowed aggregates of order events (the 31 spatio-temporal features), the
// future-window label, and the six categorical sensitive ids.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sttm/geo.hpp"
#include "sttm/simulator.hpp"

namespace sttm::features {

using geo::DistrictId;
using sim::OrderEvent;
using sim::Timestamp;

inline constexpr std::size_t kFeatureCount = 31;
inline constexpr std::size_t kSensitiveCount = 6;
// Zero-denominator rates, empty averages and missing districts.
inline constexpr double kSentinel = -1.0;
inline constexpr Timestamp kOnTimeSeconds = 40 * 60;
inline constexpr Timestamp kLookbackSeconds = 60 * 60;
inline constexpr Timestamp kLabelHorizonSeconds = 5 * 60;

enum class FeatureKind { kCount, kRate, kMinutes };

struct FeatureSpec {
  std::string_view name;
  FeatureKind kind;
  int window_minutes;
};

// Canonical, frozen feature order.
const std::array<FeatureSpec, kFeatureCount>& feature_catalog();
std::uint64_t feature_order_hash();

struct SliceFeatures {
  DistrictId district_id = 0;
  Timestamp slice_end = 0;
  std::array<double, kFeatureCount> values{};
};

// Per-district views of an event log sorted by creation, delivery and
// cancellation time. Holds pointers into the caller's event storage.
class EventIndex {
 public:
  explicit EventIndex(std::span<const OrderEvent> events);

  std::span<const OrderEvent* const> created(DistrictId district) const;
  std::span<const OrderEvent* const> delivered(DistrictId district) const;
  std::span<const OrderEvent* const> canceled(DistrictId district) const;
  std::vector<DistrictId> districts() const;

 private:
  struct Lists {
    std::vector<const OrderEvent*> created, delivered, canceled;
  };
  std::map<DistrictId, Lists> by_district_;
};

SliceFeatures aggregate_slice(const EventIndex& index, DistrictId district, Timestamp slice_end);
SliceFeatures aggregate_slice(std::span<const OrderEvent> events, DistrictId district, Timestamp slice_end);

// True when any lifecycle timestamp of the district falls in the hour ending at slice_end.
bool has_activity(const EventIndex& index, DistrictId district, Timestamp slice_end);

struct LabelOutcome {
  std::optional<double> minutes;   // absent: no delivered order in the window
  std::size_t unresolved = 0;      // orders with neither delivery nor cancellation
};

// Mean delivery minutes of orders created in (sample_time, sample_time + 5 min].
LabelOutcome compute_label(const EventIndex& index, DistrictId district, Timestamp sample_time);
LabelOutcome compute_label(std::span<const OrderEvent> events, DistrictId district, Timestamp sample_time);

// ---------------------------------------------------------------------------
// Sensitive features: city, district, minute, peak period, day of week, weather.

enum SensitiveSlot : std::size_t {
  kCitySlot = 0,
  kDistrictSlot = 1,
  kMinuteSlot = 2,
  kPeakSlot = 3,
  kDayOfWeekSlot = 4,
  kWeatherSlot = 5,
};

using SensitiveIds = std::array<std::int64_t, kSensitiveCount>;

inline constexpr std::int64_t kUnknownId = 0;
inline constexpr std::int64_t kDefaultCity = 1;

// City and district vocabularies fixed from the training split; id 0 is reserved for unseen values.
class Vocabulary {
 public:
  Vocabulary() = default;
  static Vocabulary fit(std::span<const DistrictId> training_districts,
                        const std::map<DistrictId, std::int64_t>& city_of = {});

  std::int64_t city_id(std::int64_t raw_city) const;
  std::int64_t district_id(DistrictId raw_district) const;
  std::int64_t city_of(DistrictId raw_district) const;

  std::array<std::size_t, kSensitiveCount> sizes() const;
  const std::map<std::int64_t, std::int64_t>& cities() const noexcept { return cities_; }
  const std::map<DistrictId, std::int64_t>& districts() const noexcept { return districts_; }
  const std::map<DistrictId, std::int64_t>& district_city() const noexcept { return district_city_; }

  static Vocabulary from_maps(std::map<std::int64_t, std::int64_t> cities, std::map<DistrictId, std::int64_t> districts,
                              std::map<DistrictId, std::int64_t> district_city);

 private:
  std::map<std::int64_t, std::int64_t> cities_;     // raw city -> id
  std::map<DistrictId, std::int64_t> districts_;    // raw district -> id
  std::map<DistrictId, std::int64_t> district_city_;
};

// 1..1440; midnight maps to 1440.
std::int64_t minute_feature(Timestamp t);

SensitiveIds build_sensitive(DistrictId district, Timestamp sample_time, const sim::RegimeCalendar& calendar,
                             const Vocabulary& vocabulary);

// ---------------------------------------------------------------------------
// Samples and normalization

struct Sample {
  DistrictId district_id = 0;
  Timestamp sample_time = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  std::vector<double> x_a;  // [m][n][kFeatureCount], center first, oldest slice first
  SensitiveIds x_b{};
  double label = 0.0;
  std::vector<geo::RelativeCoord> coords;  // one per district row

  double& at(std::size_t district, std::size_t slice, std::size_t feature) {
    return x_a[(district * n + slice) * kFeatureCount + feature];
  }
  double at(std::size_t district, std::size_t slice, std::size_t feature) const {
    return x_a[(district * n + slice) * kFeatureCount + feature];
  }
  bool row_missing(std::size_t district, std::size_t slice) const;
};

struct NormalizationStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{};
  std::array<bool, kFeatureCount> constant{};
  double label_mean = 0.0;
  double label_stddev = 1.0;

  std::uint64_t hash() const;
};

// True for values exempt from z-scoring: sentinel-valued rates/averages.
bool is_sentinel(std::size_t feature, double raw_value);

// Accumulates per-feature moments; rows that are entirely sentinel are skipped.
class NormalizationAccumulator {
 public:
  void add_row(std::span<const double> row);
  void add_label(double label);
  NormalizationStats finish() const;

 private:
  // Welford running moments
  std::array<double, kFeatureCount> mean_{};
  std::array<double, kFeatureCount> m2_{};
  std::array<std::size_t, kFeatureCount> count_{};
  double label_mean_ = 0.0, label_m2_ = 0.0;
  std::size_t label_count_ = 0;
};

NormalizationStats fit_normalization(std::span<const Sample> train);
// In place, on a single feature row. Missing rows and sentinels stay at -1.
void normalize_row(std::span<double> row, const NormalizationStats& stats);
void denormalize_row(std::span<double> row, const NormalizationStats& stats);
void apply_normalization(Sample& sample, const NormalizationStats& stats);

void write_stats(const std::string& path, const NormalizationStats& stats);
NormalizationStats read_stats(const std::string& path);

}  // namespace sttm::features
