#include "sttm/simulator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <tuple>

#include "sttm/errors.hpp"

namespace sttm::sim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
}

struct PeakSpan {
  int begin;
  int end;
  PeakPeriod period;
};

constexpr std::array<PeakSpan, 5> kPeakTable{{
    {7 * 60, 9 * 60, PeakPeriod::kBreakfast},
    {11 * 60, 13 * 60, PeakPeriod::kMorningRush},
    {14 * 60 + 30, 16 * 60 + 30, PeakPeriod::kAfternoonTea},
    {17 * 60, 19 * 60 + 30, PeakPeriod::kEveningRush},
    {21 * 60, 24 * 60, PeakPeriod::kNightSnack},
}};

Timestamp floor_div(Timestamp a, Timestamp b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }

// One order before id assignment.
struct Draft {
  OrderEvent event;
  std::uint64_t sequence = 0;
};

}  // namespace

std::string lifecycle_violation(const OrderEvent& e) {
  Timestamp last = e.created_at;
  const std::pair<const char*, const std::optional<Timestamp>*> stages[] = {
      {"accepted_at", &e.accepted_at},
      {"arrived_store_at", &e.arrived_store_at},
      {"picked_up_at", &e.picked_up_at},
      {"delivered_at", &e.delivered_at},
  };
  for (const auto& [name, stamp] : stages) {
    if (!stamp->has_value()) continue;
    if (**stamp < last) return std::string(name) + " precedes an earlier lifecycle stage";
    last = **stamp;
  }
  if (e.delivered_at && e.canceled_at) return "order both delivered and canceled";
  if (e.canceled_at && *e.canceled_at < e.created_at) return "canceled_at precedes created_at";
  if (e.delivered_at) {
    const Timestamp duration = *e.delivered_at - e.created_at;
    if (duration <= 0 || duration > static_cast<Timestamp>(kMaxDurationMinutes * 60)) {
      return "delivery duration outside (0, 240] minutes";
    }
  }
  return {};
}

std::string_view to_string(PeakPeriod p) {
  switch (p) {
    case PeakPeriod::kOffPeak: return "off-peak";
    case PeakPeriod::kBreakfast: return "breakfast";
    case PeakPeriod::kMorningRush: return "morning rush";
    case PeakPeriod::kAfternoonTea: return "afternoon tea";
    case PeakPeriod::kEveningRush: return "evening rush";
    case PeakPeriod::kNightSnack: return "night snack";
  }
  return "?";
}

std::string_view to_string(WeatherLevel w) {
  switch (w) {
    case WeatherLevel::kNormal: return "normal";
    case WeatherLevel::kSlightlyBad: return "slightly bad";
    case WeatherLevel::kBad: return "bad";
    case WeatherLevel::kExtremelyBad: return "extremely bad";
  }
  return "?";
}

PeakPeriod peak_period_at_minute(int minute) {
  for (const auto& span : kPeakTable) {
    if (minute >= span.begin && minute < span.end) return span.period;
  }
  return PeakPeriod::kOffPeak;
}

int minute_of_day(Timestamp t) {
  return static_cast<int>((t - floor_div(t, kSecondsPerDay) * kSecondsPerDay) / kSecondsPerMinute);
}

int day_of_week(Timestamp t) {
  // 1970-01-01 was a Thursday (4).
  const Timestamp days = floor_div(t, kSecondsPerDay);
  return static_cast<int>(((days + 3) % 7 + 7) % 7) + 1;
}

// ---------------------------------------------------------------------------

RegimeCalendar::RegimeCalendar(std::vector<WeatherWindow> windows) : windows_(std::move(windows)) {
  std::sort(windows_.begin(), windows_.end(), [](const WeatherWindow& a, const WeatherWindow& b) {
    return std::tie(a.start, a.district_id, a.end, a.level) < std::tie(b.start, b.district_id, b.end, b.level);
  });
}

PeakPeriod RegimeCalendar::peak_at(Timestamp t) const { return peak_period_at_minute(minute_of_day(t)); }

WeatherLevel RegimeCalendar::weather_at(DistrictId district, Timestamp t) const {
  int worst = 0;
  for (const auto& w : windows_) {
    if (w.start > t) break;
    if (w.district_id == district && t < w.end) worst = std::max(worst, static_cast<int>(w.level));
  }
  return static_cast<WeatherLevel>(worst);
}

void write_weather(const std::string& path, const RegimeCalendar& calendar) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write weather file " + path);
  for (const auto& w : calendar.windows()) {
    out << w.district_id << '|' << w.start << '|' << w.end << '|' << static_cast<int>(w.level) << '\n';
  }
}

RegimeCalendar read_weather(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open weather file " + path);
  std::vector<WeatherWindow> windows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::int64_t fields[4];
    std::size_t count = 0;
    std::size_t pos = 0;
    while (count < 4) {
      const std::size_t bar = line.find('|', pos);
      const std::size_t end = bar == std::string::npos ? line.size() : bar;
      auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + end, fields[count]);
      if (ec != std::errc() || ptr != line.data() + end) throw ParseError(path, line_no, "malformed weather field");
      ++count;
      if (bar == std::string::npos) break;
      pos = bar + 1;
    }
    if (count != 4 || line.find('|', pos) != std::string::npos) throw ParseError(path, line_no, "expected 4 fields");
    if (fields[3] < 0 || fields[3] >= kWeatherLevelCount) throw ParseError(path, line_no, "weather level out of range");
    if (fields[2] <= fields[1]) throw ParseError(path, line_no, "empty weather window");
    windows.push_back({fields[0], fields[1], fields[2], static_cast<WeatherLevel>(fields[3])});
  }
  return RegimeCalendar(std::move(windows));
}

// ---------------------------------------------------------------------------

void SimConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("sim." + field + ": " + why); };
  if (district_count < 1) fail("district_count", "must be at least 1");
  if (days < 1) fail("days", "must be at least 1");
  if (open_minute < 0 || close_minute > 1440 || open_minute >= close_minute) {
    fail("open_minute", "operating hours must satisfy 0 <= open < close <= 1440");
  }
  if (!(base_order_rate > 0.0)) fail("base_order_rate", "must be positive");
  if (!(rate_spread >= 0.0)) fail("rate_spread", "must be non-negative");
  for (std::size_t i = 0; i < peak_multipliers.size(); ++i) {
    if (!(peak_multipliers[i] >= 0.0) || !std::isfinite(peak_multipliers[i])) {
      fail("peak_multipliers[" + std::to_string(i) + "]", "must be finite and non-negative");
    }
  }
  for (std::size_t i = 0; i < weather_delay.size(); ++i) {
    if (!(weather_delay[i] > 0.0)) fail("weather_delay[" + std::to_string(i) + "]", "must be positive");
    if (!(weather_capacity[i] > 0.0)) fail("weather_capacity[" + std::to_string(i) + "]", "must be positive");
  }
  if (!(median_duration_minutes > 0.0) || median_duration_minutes > kMaxDurationMinutes) {
    fail("median_duration_minutes", "must lie in (0, 240]");
  }
  if (!(duration_sigma >= 0.0)) fail("duration_sigma", "must be non-negative");
  if (!(district_duration_spread >= 0.0)) fail("district_duration_spread", "must be non-negative");
  if (!(rider_capacity > 0.0)) fail("rider_capacity", "must be positive");
  if (!(congestion >= 0.0)) fail("congestion", "must be non-negative");
  if (!(demand_sigma >= 0.0)) fail("demand_sigma", "must be non-negative");
  if (!(demand_persistence >= 0.0 && demand_persistence < 1.0)) fail("demand_persistence", "must lie in [0, 1)");
  if (!(weather_events_per_day >= 0.0)) fail("weather_events_per_day", "must be non-negative");
  if (weather_span < 1) fail("weather_span", "must be at least 1");
  if (!(cancel_base >= 0.0 && cancel_base < 1.0)) fail("cancel_base", "must lie in [0, 1)");
  if (!(city_radius_km > 0.0)) fail("city_radius_km", "must be positive");
  if (!(std::fabs(city_lat) < 80.0)) fail("city_lat", "must lie in (-80, 80)");
}

std::vector<geo::DistrictGeo> generate_districts(const SimConfig& config) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, 1, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double km_per_deg_lat = 111.32;
  const double km_per_deg_lng = 111.32 * std::cos(config.city_lat * std::numbers::pi / 180.0);
  std::vector<geo::DistrictGeo> out;
  out.reserve(config.district_count);
  for (std::size_t i = 0; i < config.district_count; ++i) {
    const double r = config.city_radius_km * std::sqrt(unit(rng));
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    const double lng = config.city_lng + r * std::cos(theta) / km_per_deg_lng;
    const double lat = config.city_lat + r * std::sin(theta) / km_per_deg_lat;
    out.push_back(geo::make_district(static_cast<DistrictId>(i + 1), lng, lat));
  }
  return out;
}

namespace {

struct DistrictProfile {
  DistrictId id = 0;
  double rate = 0.0;
  double duration_factor = 1.0;
};

std::vector<WeatherWindow> simulate_weather(const SimConfig& config, std::span<const geo::DistrictGeo> districts,
                                            const geo::NeighborMap& spans, int day) {
  std::mt19937_64 rng(derive_seed(config.seed, 2, static_cast<std::uint64_t>(day)));
  std::poisson_distribution<int> event_count(config.weather_events_per_day);
  std::uniform_int_distribution<std::size_t> pick_district(0, districts.size() - 1);
  std::discrete_distribution<int> pick_level({0.0, 0.45, 0.35, 0.20});
  std::uniform_int_distribution<int> start_minute(config.open_minute, config.close_minute - 30);
  std::uniform_int_distribution<int> duration_minutes(60, 240);
  const Timestamp day_start = config.start_time + day * kSecondsPerDay;
  std::vector<WeatherWindow> out;
  const int events = event_count(rng);
  for (int e = 0; e < events; ++e) {
    const DistrictId center = districts[pick_district(rng)].district_id;
    const auto level = static_cast<WeatherLevel>(pick_level(rng));
    const Timestamp start = day_start + start_minute(rng) * kSecondsPerMinute;
    const Timestamp end = start + duration_minutes(rng) * kSecondsPerMinute;
    for (DistrictId id : spans.at(center)) out.push_back({id, start, end, level});
  }
  return out;
}

void simulate_district_day(const SimConfig& config, const DistrictProfile& profile, const RegimeCalendar& calendar,
                           int day, std::vector<Draft>& out) {
  std::mt19937_64 rng(derive_seed(config.seed, 3, static_cast<std::uint64_t>(day) * 1000003ULL +
                                                      static_cast<std::uint64_t>(profile.id)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Timestamp day_start = config.start_time + day * kSecondsPerDay;
  const double rho = config.demand_persistence;
  const double sigma = config.demand_sigma;
  double shock = sigma * gauss(rng);

  // completion (delivery or cancellation) times of currently open orders
  std::priority_queue<Timestamp, std::vector<Timestamp>, std::greater<>> open;
  std::uint64_t sequence = 0;

  for (int minute = config.open_minute; minute < config.close_minute; ++minute) {
    if ((minute - config.open_minute) % 10 == 0 && minute != config.open_minute) {
      shock = rho * shock + std::sqrt(1.0 - rho * rho) * sigma * gauss(rng);
    }
    const double multiplier = config.peak_multipliers[static_cast<int>(peak_period_at_minute(minute))];
    const double intensity = profile.rate * multiplier * std::exp(shock - 0.5 * sigma * sigma);
    if (!(intensity > 0.0)) continue;
    std::poisson_distribution<int> arrivals(intensity);
    const int count = arrivals(rng);
    const Timestamp minute_start = day_start + minute * kSecondsPerMinute;
    std::vector<Timestamp> offsets(static_cast<std::size_t>(count));
    for (auto& o : offsets) o = static_cast<Timestamp>(unit(rng) * 60.0);
    std::sort(offsets.begin(), offsets.end());

    for (Timestamp offset : offsets) {
      const Timestamp created = minute_start + offset;
      while (!open.empty() && open.top() <= created) open.pop();
      const auto weather = static_cast<int>(calendar.weather_at(profile.id, created));
      const double capacity = config.rider_capacity * profile.rate * config.weather_capacity[weather];
      const double load = static_cast<double>(open.size()) / capacity;
      const double stretch = 1.0 + config.congestion * std::max(0.0, load - 1.0);
      const double expected =
          config.median_duration_minutes * profile.duration_factor * config.weather_delay[weather] * stretch;
      double minutes = expected * std::exp(config.duration_sigma * gauss(rng));
      minutes = std::clamp(minutes, 3.0, kMaxDurationMinutes);
      const Timestamp duration = std::clamp<Timestamp>(static_cast<Timestamp>(std::llround(minutes * 60.0)), 180,
                                                       static_cast<Timestamp>(kMaxDurationMinutes * 60));

      const double accept_minutes = -std::log(1.0 - unit(rng)) * 1.5 * stretch * config.weather_delay[weather];
      const double f_accept = std::min(0.3, accept_minutes * 60.0 / static_cast<double>(duration));
      const double f_arrive = f_accept + 0.15 + 0.2 * unit(rng);
      const double f_pickup = std::max(f_arrive, 0.35 + 0.2 * unit(rng)) + 0.05 * unit(rng);
      auto stamp = [&](double fraction) {
        return created + static_cast<Timestamp>(std::llround(fraction * static_cast<double>(duration)));
      };

      OrderEvent e;
      e.district_id = profile.id;
      e.created_at = created;
      const double cancel_p = std::min(0.3, config.cancel_base * (expected / 30.0) * (expected / 30.0));
      const bool canceled = unit(rng) < cancel_p;
      const double cancel_fraction = 0.05 + 0.75 * unit(rng);
      const Timestamp stamps[3] = {stamp(f_accept), stamp(f_arrive), stamp(f_pickup)};
      if (canceled) {
        const Timestamp cancel_at = stamp(cancel_fraction);
        if (stamps[0] <= cancel_at) e.accepted_at = stamps[0];
        if (stamps[1] <= cancel_at) e.arrived_store_at = stamps[1];
        if (stamps[2] <= cancel_at) e.picked_up_at = stamps[2];
        e.canceled_at = cancel_at;
        open.push(cancel_at);
      } else {
        e.accepted_at = stamps[0];
        e.arrived_store_at = stamps[1];
        e.picked_up_at = stamps[2];
        e.delivered_at = created + duration;
        open.push(*e.delivered_at);
      }
      out.push_back({std::move(e), sequence++});
    }
  }
}

}  // namespace

SimulationOutput simulate(const SimConfig& config, std::span<const geo::DistrictGeo> districts) {
  config.validate();
  if (districts.empty()) throw ConfigError("simulate: no districts");

  std::vector<DistrictProfile> profiles;
  {
    std::mt19937_64 rng(derive_seed(config.seed, 4, 0));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (const auto& d : districts) {
      const double rate = config.base_order_rate * std::exp(config.rate_spread * gauss(rng));
      const double duration = std::exp(config.district_duration_spread * gauss(rng));
      profiles.push_back({d.district_id, rate, duration});
    }
  }
  const auto spans = geo::nearest_neighbors(districts, std::min(config.weather_span, districts.size()));

  std::vector<WeatherWindow> windows;
  for (int day = 0; day < config.days; ++day) {
    auto w = simulate_weather(config, districts, spans, day);
    windows.insert(windows.end(), w.begin(), w.end());
  }
  SimulationOutput output;
  output.calendar = RegimeCalendar(std::move(windows));

  // Days and districts are independent streams; merge order is fixed below.
  std::vector<Draft> drafts;
  for (int day = 0; day < config.days; ++day) {
    for (const auto& profile : profiles) simulate_district_day(config, profile, output.calendar, day, drafts);
  }
  std::sort(drafts.begin(), drafts.end(), [](const Draft& a, const Draft& b) {
    return std::tie(a.event.created_at, a.event.district_id, a.sequence) <
           std::tie(b.event.created_at, b.event.district_id, b.sequence);
  });
  output.events.reserve(drafts.size());
  std::int64_t next_id = 1;
  for (auto& d : drafts) {
    d.event.order_id = next_id++;
    output.events.push_back(std::move(d.event));
  }
  return output;
}

// ---------------------------------------------------------------------------
// Event log

std::string format_event(const OrderEvent& e) {
  std::string line;
  line.reserve(96);
  auto put = [&line](std::int64_t v) {
    char buf[24];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    line.append(buf, ptr);
  };
  auto put_opt = [&](const std::optional<Timestamp>& v) {
    line += '|';
    if (v) put(*v);
  };
  put(e.order_id);
  line += '|';
  put(e.district_id);
  line += '|';
  put(e.created_at);
  put_opt(e.accepted_at);
  put_opt(e.arrived_store_at);
  put_opt(e.picked_up_at);
  put_opt(e.delivered_at);
  put_opt(e.canceled_at);
  return line;
}

OrderEvent parse_event(std::string_view line, const std::string& source, std::size_t line_no) {
  std::string_view fields[8];
  std::size_t count = 0;
  std::size_t pos = 0;
  while (true) {
    const std::size_t bar = line.find('|', pos);
    if (count == 8) throw ParseError(source, line_no, "too many fields");
    fields[count++] = line.substr(pos, bar == std::string_view::npos ? std::string_view::npos : bar - pos);
    if (bar == std::string_view::npos) break;
    pos = bar + 1;
  }
  if (count != 8) throw ParseError(source, line_no, "expected 8 '|'-separated fields, got " + std::to_string(count));
  auto parse_int = [&](std::string_view f, const char* name) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
      throw ParseError(source, line_no, std::string("malformed ") + name);
    }
    return v;
  };
  auto parse_opt = [&](std::string_view f, const char* name) -> std::optional<Timestamp> {
    if (f.empty()) return std::nullopt;
    return parse_int(f, name);
  };
  OrderEvent e;
  e.order_id = parse_int(fields[0], "order_id");
  e.district_id = parse_int(fields[1], "district_id");
  e.created_at = parse_int(fields[2], "created_at");
  e.accepted_at = parse_opt(fields[3], "accepted_at");
  e.arrived_store_at = parse_opt(fields[4], "arrived_store_at");
  e.picked_up_at = parse_opt(fields[5], "picked_up_at");
  e.delivered_at = parse_opt(fields[6], "delivered_at");
  e.canceled_at = parse_opt(fields[7], "canceled_at");
  if (auto why = lifecycle_violation(e); !why.empty()) throw ParseError(source, line_no, why);
  return e;
}

void write_events(const std::string& path, std::span<const OrderEvent> events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write event log " + path);
  std::string buffer;
  buffer.reserve(1 << 20);
  for (const auto& e : events) {
    buffer += format_event(e);
    buffer += '\n';
    if (buffer.size() > (1 << 20) - 128) {
      out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
      buffer.clear();
    }
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw UserError("failed writing event log " + path);
}

std::vector<OrderEvent> read_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open event log " + path);
  std::vector<OrderEvent> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    events.push_back(parse_event(line, path, line_no));
  }
  return events;
}

}  // namespace sttm::sim
