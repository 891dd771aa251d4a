#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "sttm/errors.hpp"
#include "sttm/hash.hpp"
#include "sttm/simulator.hpp"

namespace {

namespace sim = sttm::sim;

sim::SimConfig small_config() {
  sim::SimConfig c;
  c.district_count = 6;
  c.days = 2;
  return c;
}

sim::SimulationOutput run(const sim::SimConfig& c) { return sim::simulate(c, sim::generate_districts(c)); }

TEST(Calendar, PeakTableAndDayOfWeek) {
  EXPECT_EQ(sim::peak_period_at_minute(6 * 60 + 59), sim::PeakPeriod::kOffPeak);
  EXPECT_EQ(sim::peak_period_at_minute(7 * 60), sim::PeakPeriod::kBreakfast);
  EXPECT_EQ(sim::peak_period_at_minute(12 * 60 + 15), sim::PeakPeriod::kMorningRush);
  EXPECT_EQ(sim::peak_period_at_minute(18 * 60), sim::PeakPeriod::kEveningRush);
  EXPECT_EQ(sim::peak_period_at_minute(23 * 60 + 59), sim::PeakPeriod::kNightSnack);
  // 2023-10-02 is a Monday.
  EXPECT_EQ(sim::day_of_week(1696204800), 1);
  EXPECT_EQ(sim::day_of_week(1696204800 + 86400 + 735 * 60), 2);
  EXPECT_EQ(sim::day_of_week(1696204800 - 1), 7);
  EXPECT_EQ(sim::minute_of_day(1696204800 + 735 * 60 + 59), 735);
}

TEST(Calendar, OverlappingWeatherResolvesToWorst) {
  sim::RegimeCalendar cal({{1, 100, 200, sim::WeatherLevel::kSlightlyBad}, {1, 150, 300, sim::WeatherLevel::kBad}});
  EXPECT_EQ(cal.weather_at(1, 99), sim::WeatherLevel::kNormal);
  EXPECT_EQ(cal.weather_at(1, 120), sim::WeatherLevel::kSlightlyBad);
  EXPECT_EQ(cal.weather_at(1, 160), sim::WeatherLevel::kBad);
  EXPECT_EQ(cal.weather_at(1, 300), sim::WeatherLevel::kNormal);
  EXPECT_EQ(cal.weather_at(2, 160), sim::WeatherLevel::kNormal);
}

TEST(Simulator, EveryEventSatisfiesLifecycle) {
  const auto out = run(small_config());
  ASSERT_GT(out.events.size(), 1000u);
  for (const auto& e : out.events) ASSERT_EQ(sim::lifecycle_violation(e), "") << sim::format_event(e);
  for (std::size_t i = 1; i < out.events.size(); ++i) {
    ASSERT_LE(out.events[i - 1].created_at, out.events[i].created_at);
    ASSERT_EQ(out.events[i].order_id, out.events[i - 1].order_id + 1);
  }
}

TEST(Simulator, LifecycleViolationsAreDetected) {
  sim::OrderEvent e;
  e.created_at = 1000;
  e.accepted_at = 1100;
  e.picked_up_at = 1050;
  EXPECT_NE(sim::lifecycle_violation(e), "");
  e.picked_up_at = 1200;
  e.delivered_at = 1300;
  e.canceled_at = 1300;
  EXPECT_NE(sim::lifecycle_violation(e), "");
  e.canceled_at.reset();
  EXPECT_EQ(sim::lifecycle_violation(e), "");
  e.delivered_at = 1000 + 241 * 60;
  EXPECT_NE(sim::lifecycle_violation(e), "");
}

TEST(Simulator, SameSeedSameLogDifferentSeedDifferentLog) {
  auto c = small_config();
  const auto a = run(c), b = run(c);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.calendar.windows(), b.calendar.windows());
  c.seed = 43;
  EXPECT_NE(run(c).events, a.events);
}

TEST(Simulator, ZeroPeakMultipliersEmitNothing) {
  auto c = small_config();
  c.peak_multipliers = {0, 0, 0, 0, 0, 0};
  EXPECT_TRUE(run(c).events.empty());
}

TEST(Simulator, EveningRushIntensityFollowsMultiplier) {
  sim::SimConfig c;
  c.days = 14;
  c.demand_sigma = 0.0;
  c.peak_multipliers = {1.0, 1.0, 1.0, 1.0, 3.0, 1.0};
  const auto out = run(c);
  double rush = 0, off = 0;
  for (const auto& e : out.events) {
    const auto p = sim::peak_period_at_minute(sim::minute_of_day(e.created_at));
    if (p == sim::PeakPeriod::kEveningRush) ++rush;
    if (p == sim::PeakPeriod::kOffPeak) ++off;
  }
  // Off-peak within opening hours: 9:00-11:00, 13:00-14:30, 16:30-17:00, 19:30-21:00.
  const double rush_minutes = 150.0 * 14, off_minutes = 330.0 * 14;
  EXPECT_NEAR((rush / rush_minutes) / (off / off_minutes), 3.0, 0.15);
}

TEST(Simulator, InvalidConfigNamesField) {
  auto c = small_config();
  c.base_order_rate = -1;
  try {
    c.validate();
    FAIL();
  } catch (const sttm::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sim.base_order_rate"), std::string::npos);
  }
}

TEST(EventLog, RoundTripsSimulatedAndEmptyLogs) {
  sttm::testing::TempDir dir("events");
  const auto out = run(small_config());
  const auto path = (dir / "events.log").string();
  sim::write_events(path, out.events);
  EXPECT_EQ(sim::read_events(path), out.events);
  sim::write_events(path, {});
  EXPECT_TRUE(sim::read_events(path).empty());
}

TEST(EventLog, MillionEventsRoundTripWithSameHash) {
  sttm::testing::TempDir dir("events_big");
  std::mt19937_64 rng(5);
  std::vector<sim::OrderEvent> events(1'000'000);
  for (std::size_t i = 0; i < events.size(); ++i) {
    auto& e = events[i];
    e.order_id = static_cast<std::int64_t>(i + 1);
    e.district_id = static_cast<std::int64_t>(rng() % 30);
    e.created_at = 1696204800 + static_cast<std::int64_t>(i);
    e.accepted_at = e.created_at + 30;
    if (rng() % 7 == 0) {
      e.canceled_at = e.created_at + 200;
    } else {
      e.arrived_store_at = e.created_at + 300;
      e.picked_up_at = e.created_at + 600;
      e.delivered_at = e.created_at + 1800;
    }
  }
  const auto a = (dir / "a.log").string(), b = (dir / "b.log").string();
  sim::write_events(a, events);
  const auto back = sim::read_events(a);
  EXPECT_EQ(back, events);
  sim::write_events(b, back);
  EXPECT_EQ(sttm::hash_file(a), sttm::hash_file(b));
}

TEST(EventLog, MalformedLineReportsLineNumber) {
  sttm::testing::TempDir dir("events_bad");
  const auto path = (dir / "bad.log").string();
  sim::write_events(path, run(small_config()).events);
  std::size_t lines = 0;
  {
    std::ifstream in(path);
    for (std::string l; std::getline(in, l);) ++lines;
  }
  std::ofstream(path, std::ios::app) << "12|3|notanumber|||||\n";
  try {
    sim::read_events(path);
    FAIL() << "expected ParseError";
  } catch (const sttm::ParseError& e) {
    EXPECT_EQ(e.line(), lines + 1);
  }
}

}  // namespace
