#include "sttm/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm::features {

namespace {

using Kind = FeatureKind;

constexpr std::array<FeatureSpec, kFeatureCount> kCatalog{{
    {"not_arrived_store_over_0m_last_1h", Kind::kCount, 60},
    {"not_arrived_store_over_8m_last_1h", Kind::kCount, 60},
    {"not_arrived_store_over_15m_last_1h", Kind::kCount, 60},
    {"not_picked_up_over_0m_last_1h", Kind::kCount, 60},
    {"not_picked_up_over_8m_last_1h", Kind::kCount, 60},
    {"not_picked_up_over_15m_last_1h", Kind::kCount, 60},
    {"not_accepted_over_0m_last_1h", Kind::kCount, 60},
    {"not_accepted_over_8m_last_1h", Kind::kCount, 60},
    {"not_accepted_over_15m_last_1h", Kind::kCount, 60},
    {"uncompleted_last_10m", Kind::kCount, 10},
    {"uncompleted_last_30m", Kind::kCount, 30},
    {"uncompleted_last_60m", Kind::kCount, 60},
    {"completed_last_10m", Kind::kCount, 10},
    {"completed_last_30m", Kind::kCount, 30},
    {"completed_last_45m", Kind::kCount, 45},
    {"completed_last_60m", Kind::kCount, 60},
    {"canceled_last_5m", Kind::kCount, 5},
    {"canceled_last_10m", Kind::kCount, 10},
    {"acceptance_rate_last_3m", Kind::kRate, 3},
    {"acceptance_rate_last_5m", Kind::kRate, 5},
    {"acceptance_rate_last_10m", Kind::kRate, 10},
    {"acceptance_rate_last_15m", Kind::kRate, 15},
    {"acceptance_rate_last_30m", Kind::kRate, 30},
    {"completion_rate_last_30m", Kind::kRate, 30},
    {"completion_rate_last_60m", Kind::kRate, 60},
    {"on_time_rate_last_10m", Kind::kRate, 10},
    {"on_time_rate_last_30m", Kind::kRate, 30},
    {"on_time_rate_last_45m", Kind::kRate, 45},
    {"on_time_rate_last_60m", Kind::kRate, 60},
    {"avg_delivery_minutes_last_30m", Kind::kMinutes, 30},
    {"avg_delivery_minutes_last_60m", Kind::kMinutes, 60},
}};

constexpr std::array<int, 3> kStageThresholds{0, 8, 15};
constexpr std::array<int, 3> kUncompletedWindows{10, 30, 60};
constexpr std::array<int, 4> kCompletedWindows{10, 30, 45, 60};
constexpr std::array<int, 2> kCanceledWindows{5, 10};
constexpr std::array<int, 5> kAcceptanceWindows{3, 5, 10, 15, 30};
constexpr std::array<int, 2> kCompletionWindows{30, 60};
constexpr std::array<int, 4> kOnTimeWindows{10, 30, 45, 60};
constexpr std::array<int, 2> kAverageWindows{30, 60};

constexpr Timestamp minutes(int m) { return static_cast<Timestamp>(m) * 60; }

bool known(const std::optional<Timestamp>& stamp, Timestamp t) { return stamp.has_value() && *stamp <= t; }

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? kSentinel : static_cast<double>(num) / static_cast<double>(den);
}

// Elements of a list sorted by key() lying in (lo, hi].
template <class Key>
std::span<const OrderEvent* const> window(std::span<const OrderEvent* const> sorted, Timestamp lo, Timestamp hi,
                                          Key key) {
  auto first = std::partition_point(sorted.begin(), sorted.end(), [&](const OrderEvent* e) { return key(e) <= lo; });
  auto last = std::partition_point(first, sorted.end(), [&](const OrderEvent* e) { return key(e) <= hi; });
  return {first, last};
}

const auto created_key = [](const OrderEvent* e) { return e->created_at; };
const auto delivered_key = [](const OrderEvent* e) { return *e->delivered_at; };
const auto canceled_key = [](const OrderEvent* e) { return *e->canceled_at; };

std::span<const OrderEvent* const> empty_span() { return {}; }

}  // namespace

const std::array<FeatureSpec, kFeatureCount>& feature_catalog() { return kCatalog; }

std::uint64_t feature_order_hash() {
  Fnv1a h;
  for (const auto& spec : kCatalog) {
    h.update(spec.name);
    h.update(static_cast<std::uint64_t>(spec.kind));
    h.update(static_cast<std::uint64_t>(spec.window_minutes));
  }
  return h.digest();
}

// ---------------------------------------------------------------------------

EventIndex::EventIndex(std::span<const OrderEvent> events) {
  for (const auto& e : events) {
    auto& lists = by_district_[e.district_id];
    lists.created.push_back(&e);
    if (e.delivered_at) lists.delivered.push_back(&e);
    if (e.canceled_at) lists.canceled.push_back(&e);
  }
  auto by = [](auto key) {
    return [key](const OrderEvent* a, const OrderEvent* b) {
      return std::pair(key(a), a->order_id) < std::pair(key(b), b->order_id);
    };
  };
  for (auto& [id, lists] : by_district_) {
    std::sort(lists.created.begin(), lists.created.end(), by(created_key));
    std::sort(lists.delivered.begin(), lists.delivered.end(), by(delivered_key));
    std::sort(lists.canceled.begin(), lists.canceled.end(), by(canceled_key));
  }
}

std::span<const OrderEvent* const> EventIndex::created(DistrictId district) const {
  auto it = by_district_.find(district);
  return it == by_district_.end() ? empty_span() : std::span<const OrderEvent* const>(it->second.created);
}

std::span<const OrderEvent* const> EventIndex::delivered(DistrictId district) const {
  auto it = by_district_.find(district);
  return it == by_district_.end() ? empty_span() : std::span<const OrderEvent* const>(it->second.delivered);
}

std::span<const OrderEvent* const> EventIndex::canceled(DistrictId district) const {
  auto it = by_district_.find(district);
  return it == by_district_.end() ? empty_span() : std::span<const OrderEvent* const>(it->second.canceled);
}

std::vector<DistrictId> EventIndex::districts() const {
  std::vector<DistrictId> out;
  for (const auto& [id, lists] : by_district_) out.push_back(id);
  return out;
}

SliceFeatures aggregate_slice(const EventIndex& index, DistrictId district, Timestamp t) {
  SliceFeatures out;
  out.district_id = district;
  out.slice_end = t;
  auto& v = out.values;
  std::size_t f = 0;

  const auto last_hour = window(index.created(district), t - kLookbackSeconds, t, created_key);

  // Orders stuck before a lifecycle stage, created within the last hour.
  const std::optional<Timestamp> OrderEvent::*stages[3] = {&OrderEvent::arrived_store_at, &OrderEvent::picked_up_at,
                                                            &OrderEvent::accepted_at};
  for (auto stage : stages) {
    std::array<std::size_t, 3> counts{};
    for (const OrderEvent* e : last_hour) {
      if (known(e->canceled_at, t) || known(e->*stage, t)) continue;
      const Timestamp age = t - e->created_at;
      for (std::size_t k = 0; k < kStageThresholds.size(); ++k) {
        if (age > minutes(kStageThresholds[k])) ++counts[k];
      }
    }
    for (std::size_t c : counts) v[f++] = static_cast<double>(c);
  }

  for (int w : kUncompletedWindows) {
    std::size_t count = 0;
    for (const OrderEvent* e : window(last_hour, t - minutes(w), t, created_key)) {
      if (!known(e->delivered_at, t) && !known(e->canceled_at, t)) ++count;
    }
    v[f++] = static_cast<double>(count);
  }

  const auto delivered_hour = window(index.delivered(district), t - kLookbackSeconds, t, delivered_key);
  for (int w : kCompletedWindows) {
    v[f++] = static_cast<double>(window(delivered_hour, t - minutes(w), t, delivered_key).size());
  }

  for (int w : kCanceledWindows) {
    v[f++] = static_cast<double>(window(index.canceled(district), t - minutes(w), t, canceled_key).size());
  }

  for (int w : kAcceptanceWindows) {
    const auto created = window(last_hour, t - minutes(w), t, created_key);
    const auto accepted =
        std::count_if(created.begin(), created.end(), [t](const OrderEvent* e) { return known(e->accepted_at, t); });
    v[f++] = ratio(static_cast<std::size_t>(accepted), created.size());
  }

  for (int w : kCompletionWindows) {
    const auto created = window(last_hour, t - minutes(w), t, created_key);
    const auto done =
        std::count_if(created.begin(), created.end(), [t](const OrderEvent* e) { return known(e->delivered_at, t); });
    v[f++] = ratio(static_cast<std::size_t>(done), created.size());
  }

  for (int w : kOnTimeWindows) {
    const auto done = window(delivered_hour, t - minutes(w), t, delivered_key);
    const auto on_time = std::count_if(done.begin(), done.end(), [](const OrderEvent* e) {
      return *e->delivered_at - e->created_at <= kOnTimeSeconds;
    });
    v[f++] = ratio(static_cast<std::size_t>(on_time), done.size());
  }

  for (int w : kAverageWindows) {
    const auto done = window(delivered_hour, t - minutes(w), t, delivered_key);
    if (done.empty()) {
      v[f++] = kSentinel;
      continue;
    }
    double total = 0.0;
    for (const OrderEvent* e : done) total += static_cast<double>(*e->delivered_at - e->created_at) / 60.0;
    v[f++] = total / static_cast<double>(done.size());
  }
  return out;
}

SliceFeatures aggregate_slice(std::span<const OrderEvent> events, DistrictId district, Timestamp slice_end) {
  return aggregate_slice(EventIndex(events), district, slice_end);
}

bool has_activity(const EventIndex& index, DistrictId district, Timestamp t) {
  const Timestamp lo = t - kLookbackSeconds;
  const auto max_age = static_cast<Timestamp>(sim::kMaxDurationMinutes * 60);
  for (const OrderEvent* e : window(index.created(district), lo - max_age, t, created_key)) {
    for (const auto* stamp : {&e->accepted_at, &e->arrived_store_at, &e->picked_up_at, &e->delivered_at,
                              &e->canceled_at}) {
      if (stamp->has_value() && **stamp > lo && **stamp <= t) return true;
    }
    if (e->created_at > lo) return true;
  }
  return false;
}

LabelOutcome compute_label(const EventIndex& index, DistrictId district, Timestamp sample_time) {
  LabelOutcome out;
  double total = 0.0;
  std::size_t delivered = 0;
  for (const OrderEvent* e :
       window(index.created(district), sample_time, sample_time + kLabelHorizonSeconds, created_key)) {
    if (e->delivered_at) {
      total += static_cast<double>(*e->delivered_at - e->created_at) / 60.0;
      ++delivered;
    } else if (!e->canceled_at) {
      ++out.unresolved;
    }
  }
  if (delivered > 0) out.minutes = total / static_cast<double>(delivered);
  return out;
}

LabelOutcome compute_label(std::span<const OrderEvent> events, DistrictId district, Timestamp sample_time) {
  return compute_label(EventIndex(events), district, sample_time);
}

// ---------------------------------------------------------------------------

Vocabulary Vocabulary::fit(std::span<const DistrictId> training_districts,
                           const std::map<DistrictId, std::int64_t>& city_of) {
  Vocabulary v;
  std::vector<DistrictId> ids(training_districts.begin(), training_districts.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<std::int64_t> cities;
  for (DistrictId id : ids) {
    auto it = city_of.find(id);
    const std::int64_t city = it == city_of.end() ? kDefaultCity : it->second;
    v.district_city_[id] = city;
    cities.push_back(city);
  }
  std::sort(cities.begin(), cities.end());
  cities.erase(std::unique(cities.begin(), cities.end()), cities.end());
  for (std::size_t i = 0; i < cities.size(); ++i) v.cities_[cities[i]] = static_cast<std::int64_t>(i + 1);
  for (std::size_t i = 0; i < ids.size(); ++i) v.districts_[ids[i]] = static_cast<std::int64_t>(i + 1);
  return v;
}

Vocabulary Vocabulary::from_maps(std::map<std::int64_t, std::int64_t> cities,
                                 std::map<DistrictId, std::int64_t> districts,
                                 std::map<DistrictId, std::int64_t> district_city) {
  Vocabulary v;
  v.cities_ = std::move(cities);
  v.districts_ = std::move(districts);
  v.district_city_ = std::move(district_city);
  return v;
}

std::int64_t Vocabulary::city_id(std::int64_t raw_city) const {
  auto it = cities_.find(raw_city);
  return it == cities_.end() ? kUnknownId : it->second;
}

std::int64_t Vocabulary::district_id(DistrictId raw_district) const {
  auto it = districts_.find(raw_district);
  return it == districts_.end() ? kUnknownId : it->second;
}

std::int64_t Vocabulary::city_of(DistrictId raw_district) const {
  auto it = district_city_.find(raw_district);
  return it == district_city_.end() ? kDefaultCity : it->second;
}

std::array<std::size_t, kSensitiveCount> Vocabulary::sizes() const {
  return {cities_.size() + 1, districts_.size() + 1, 1441, sim::kPeakPeriodCount, 8, sim::kWeatherLevelCount};
}

std::int64_t minute_feature(Timestamp t) {
  const int m = sim::minute_of_day(t);
  return m == 0 ? 1440 : m;
}

SensitiveIds build_sensitive(DistrictId district, Timestamp t, const sim::RegimeCalendar& calendar,
                             const Vocabulary& vocabulary) {
  SensitiveIds ids{};
  ids[kCitySlot] = vocabulary.city_id(vocabulary.city_of(district));
  ids[kDistrictSlot] = vocabulary.district_id(district);
  ids[kMinuteSlot] = minute_feature(t);
  ids[kPeakSlot] = static_cast<std::int64_t>(calendar.peak_at(t));
  ids[kDayOfWeekSlot] = sim::day_of_week(t);
  ids[kWeatherSlot] = static_cast<std::int64_t>(calendar.weather_at(district, t));
  return ids;
}

// ---------------------------------------------------------------------------

bool Sample::row_missing(std::size_t district, std::size_t slice) const {
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (at(district, slice, f) != kSentinel) return false;
  }
  return true;
}

bool is_sentinel(std::size_t feature, double raw_value) {
  return kCatalog[feature].kind != FeatureKind::kCount && raw_value == kSentinel;
}

namespace {

bool row_is_missing(std::span<const double> row) {
  return std::all_of(row.begin(), row.end(), [](double v) { return v == kSentinel; });
}

}  // namespace

void NormalizationAccumulator::add_row(std::span<const double> row) {
  if (row.size() != kFeatureCount) throw DimensionError("normalization row must have 31 features");
  if (row_is_missing(row)) return;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (is_sentinel(f, row[f])) continue;
    const double x = row[f];
    const double n = static_cast<double>(++count_[f]);
    const double delta = x - mean_[f];
    mean_[f] += delta / n;
    m2_[f] += delta * (x - mean_[f]);
  }
}

void NormalizationAccumulator::add_label(double label) {
  const double n = static_cast<double>(++label_count_);
  const double delta = label - label_mean_;
  label_mean_ += delta / n;
  label_m2_ += delta * (label - label_mean_);
}

NormalizationStats NormalizationAccumulator::finish() const {
  NormalizationStats s;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    s.mean[f] = mean_[f];
    const double var = count_[f] > 0 ? m2_[f] / static_cast<double>(count_[f]) : 0.0;
    s.stddev[f] = std::sqrt(var);
    s.constant[f] = !(s.stddev[f] > 1e-12);
    if (s.constant[f]) s.stddev[f] = 1.0;
  }
  s.label_mean = label_mean_;
  const double label_var = label_count_ > 0 ? label_m2_ / static_cast<double>(label_count_) : 0.0;
  s.label_stddev = label_var > 1e-24 ? std::sqrt(label_var) : 1.0;
  return s;
}

NormalizationStats fit_normalization(std::span<const Sample> train) {
  if (train.empty()) throw ConfigError("fit_normalization: empty training split");
  NormalizationAccumulator acc;
  for (const auto& s : train) {
    for (std::size_t r = 0; r < s.m * s.n; ++r) {
      acc.add_row(std::span<const double>(s.x_a).subspan(r * kFeatureCount, kFeatureCount));
    }
    acc.add_label(s.label);
  }
  return acc.finish();
}

void normalize_row(std::span<double> row, const NormalizationStats& stats) {
  if (row_is_missing(row)) return;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (is_sentinel(f, row[f])) continue;
    row[f] = stats.constant[f] ? 0.0 : (row[f] - stats.mean[f]) / stats.stddev[f];
  }
}

void denormalize_row(std::span<double> row, const NormalizationStats& stats) {
  if (row_is_missing(row)) return;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (kCatalog[f].kind != FeatureKind::kCount && row[f] == kSentinel) continue;
    row[f] = stats.constant[f] ? stats.mean[f] : row[f] * stats.stddev[f] + stats.mean[f];
  }
}

void apply_normalization(Sample& sample, const NormalizationStats& stats) {
  for (std::size_t r = 0; r < sample.m * sample.n; ++r) {
    normalize_row(std::span<double>(sample.x_a).subspan(r * kFeatureCount, kFeatureCount), stats);
  }
}

std::uint64_t NormalizationStats::hash() const {
  Fnv1a h;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    h.update(mean[f]);
    h.update(stddev[f]);
    h.update(static_cast<std::uint64_t>(constant[f]));
  }
  h.update(label_mean);
  h.update(label_stddev);
  return h.digest();
}

void write_stats(const std::string& path, const NormalizationStats& stats) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write stats file " + path);
  char buf[128];
  out << "sttm-normalization-stats 1\n";
  out << "feature_order_hash " << to_hex(feature_order_hash()) << '\n';
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    std::snprintf(buf, sizeof(buf), "%a %a %d", stats.mean[f], stats.stddev[f], stats.constant[f] ? 1 : 0);
    out << "feature " << kCatalog[f].name << ' ' << buf << '\n';
  }
  std::snprintf(buf, sizeof(buf), "%a %a", stats.label_mean, stats.label_stddev);
  out << "label " << buf << '\n';
  out << "hash " << to_hex(stats.hash()) << '\n';
}

NormalizationStats read_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open stats file " + path);
  NormalizationStats s;
  std::string line;
  std::size_t line_no = 0, features = 0;
  std::string declared_hash;
  bool label_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key.empty()) continue;
    if (line_no == 1) {
      if (line != "sttm-normalization-stats 1") throw ParseError(path, line_no, "not a normalization stats file");
    } else if (key == "feature_order_hash") {
      std::string hex;
      ss >> hex;
      if (hex != to_hex(feature_order_hash())) throw CompatibilityError(path + ": feature order hash mismatch");
    } else if (key == "feature") {
      std::string name, mean_s, std_s;
      int constant = 0;
      ss >> name >> mean_s >> std_s >> constant;
      if (features >= kFeatureCount || name != kCatalog[features].name || !ss) {
        throw ParseError(path, line_no, "unexpected feature record");
      }
      s.mean[features] = std::strtod(mean_s.c_str(), nullptr);
      s.stddev[features] = std::strtod(std_s.c_str(), nullptr);
      s.constant[features] = constant != 0;
      ++features;
    } else if (key == "label") {
      std::string a, b;
      ss >> a >> b;
      s.label_mean = std::strtod(a.c_str(), nullptr);
      s.label_stddev = std::strtod(b.c_str(), nullptr);
      label_seen = true;
    } else if (key == "hash") {
      ss >> declared_hash;
    } else {
      throw ParseError(path, line_no, "unknown key '" + key + "'");
    }
  }
  if (features != kFeatureCount || !label_seen) throw ParseError(path, line_no, "incomplete stats file");
  if (declared_hash != to_hex(s.hash())) throw CompatibilityError(path + ": stats hash mismatch");
  return s;
}

}  // namespace sttm::features
