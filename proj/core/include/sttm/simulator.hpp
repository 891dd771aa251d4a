#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sttm/geo.hpp"

namespace sttm::sim {

using Timestamp = std::int64_t;  // epoch seconds, UTC
using geo::DistrictId;

inline constexpr Timestamp kSecondsPerMinute = 60;
inline constexpr Timestamp kSecondsPerDay = 86400;
inline constexpr double kMaxDurationMinutes = 240.0;

struct OrderEvent {
  std::int64_t order_id = 0;
  DistrictId district_id = 0;
  Timestamp created_at = 0;
  std::optional<Timestamp> accepted_at;
  std::optional<Timestamp> arrived_store_at;
  std::optional<Timestamp> picked_up_at;
  std::optional<Timestamp> delivered_at;
  std::optional<Timestamp> canceled_at;

  friend bool operator==(const OrderEvent&, const OrderEvent&) = default;
};

// Empty string when the event is consistent, else a description of the first violation.
std::string lifecycle_violation(const OrderEvent& event);

enum class PeakPeriod : int {
  kOffPeak = 0,
  kBreakfast = 1,
  kMorningRush = 2,
  kAfternoonTea = 3,
  kEveningRush = 4,
  kNightSnack = 5,
};
inline constexpr int kPeakPeriodCount = 6;

enum class WeatherLevel : int {
  kNormal = 0,
  kSlightlyBad = 1,
  kBad = 2,
  kExtremelyBad = 3,
};
inline constexpr int kWeatherLevelCount = 4;

std::string_view to_string(PeakPeriod p);
std::string_view to_string(WeatherLevel w);

// minute_of_day in [0, 1440)
PeakPeriod peak_period_at_minute(int minute_of_day);
int minute_of_day(Timestamp t);
// Monday = 1 ... Sunday = 7
int day_of_week(Timestamp t);

struct WeatherWindow {
  DistrictId district_id = 0;
  Timestamp start = 0;  // inclusive
  Timestamp end = 0;    // exclusive
  WeatherLevel level = WeatherLevel::kNormal;

  friend bool operator==(const WeatherWindow&, const WeatherWindow&) = default;
};

// Peak labels come from a fixed time-of-day table; weather is a list of
// per-district windows (overlaps resolve to the worst level).
class RegimeCalendar {
 public:
  RegimeCalendar() = default;
  explicit RegimeCalendar(std::vector<WeatherWindow> windows);

  PeakPeriod peak_at(Timestamp t) const;
  WeatherLevel weather_at(DistrictId district, Timestamp t) const;
  const std::vector<WeatherWindow>& windows() const noexcept { return windows_; }

 private:
  std::vector<WeatherWindow> windows_;
};

void write_weather(const std::string& path, const RegimeCalendar& calendar);
RegimeCalendar read_weather(const std::string& path);

struct SimConfig {
  std::size_t district_count = 30;
  int days = 18;
  Timestamp start_time = 1696204800;  // 2023-10-02T00:00:00Z, a Monday
  int open_minute = 7 * 60;
  int close_minute = 23 * 60;

  double base_order_rate = 0.8;  // orders per minute for a median district
  double rate_spread = 0.35;     // lognormal sigma of per-district rates
  std::array<double, kPeakPeriodCount> peak_multipliers{1.0, 1.4, 2.5, 1.4, 2.5, 1.6};
  std::array<double, kWeatherLevelCount> weather_delay{1.0, 1.15, 1.35, 1.7};
  std::array<double, kWeatherLevelCount> weather_capacity{1.0, 0.9, 0.75, 0.55};

  double median_duration_minutes = 30.0;
  double duration_sigma = 0.25;
  double district_duration_spread = 0.1;
  // Open orders a district absorbs per unit of base rate before congestion kicks in.
  double rider_capacity = 45.0;
  double congestion = 0.25;

  // Log-scale demand shock, AR(1) updated every 10 minutes.
  double demand_sigma = 0.25;
  double demand_persistence = 0.9;

  double weather_events_per_day = 0.8;
  std::size_t weather_span = 6;  // district plus its nearest neighbors
  double cancel_base = 0.02;

  double city_lng = 121.47;
  double city_lat = 31.23;
  double city_radius_km = 12.0;

  std::uint64_t seed = 42;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct SimulationOutput {
  std::vector<OrderEvent> events;  // sorted by created_at, then order_id
  RegimeCalendar calendar;
};

std::vector<geo::DistrictGeo> generate_districts(const SimConfig& config);
SimulationOutput simulate(const SimConfig& config, std::span<const geo::DistrictGeo> districts);

// order_id|district_id|created_at|accepted_at|arrived_store_at|picked_up_at|delivered_at|canceled_at
std::string format_event(const OrderEvent& event);
OrderEvent parse_event(std::string_view line, const std::string& source, std::size_t line_no);
void write_events(const std::string& path, std::span<const OrderEvent> events);
std::vector<OrderEvent> read_events(const std::string& path);

}  // namespace sttm::sim
