#include "sttm/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm::features {

namespace {

constexpr std::string_view kMagic = "sttm-dataset 1";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

struct Grid {
  Timestamp start = 0;
  int origin_minute = 0;
  int step_minutes = 5;
  std::size_t per_day = 0;
  int days = 0;

  std::size_t size() const { return per_day * static_cast<std::size_t>(days); }
  Timestamp time_at(std::size_t index) const {
    const auto day = static_cast<Timestamp>(index / per_day);
    const auto slot = static_cast<Timestamp>(index % per_day);
    return start + day * sim::kSecondsPerDay + (origin_minute + slot * step_minutes) * sim::kSecondsPerMinute;
  }
};

Grid make_grid(const Horizon& horizon, const FeatureConfig& config) {
  Grid g;
  g.start = horizon.start;
  g.days = horizon.days;
  g.step_minutes = config.schedule.step_minutes;
  g.origin_minute = config.schedule.first_minute -
                    static_cast<int>(config.n - 1) * config.schedule.slice_minutes;
  g.per_day = static_cast<std::size_t>((config.schedule.last_minute - g.origin_minute) / g.step_minutes + 1);
  return g;
}

void check_horizon(const Horizon& horizon, const FeatureConfig& config) {
  if (horizon.days <= 0) throw RangeError("simulated horizon has no days");
  const int total = config.split.train + config.split.validation + config.split.test;
  if (total > horizon.days) {
    throw RangeError("split covers " + std::to_string(total) + " days but the simulated horizon has " +
                     std::to_string(horizon.days));
  }
  if (horizon.start % sim::kSecondsPerDay != 0) throw RangeError("horizon start must be a UTC midnight");
}

std::array<double, kFeatureCount> raw_row(const EventIndex& index, DistrictId district, Timestamp t) {
  std::array<double, kFeatureCount> row;
  if (!has_activity(index, district, t)) {
    row.fill(kSentinel);
    return row;
  }
  return aggregate_slice(index, district, t).values;
}

void add_fields(Fnv1a& h, const FeatureConfig& c) {
  for (std::int64_t v :
       {static_cast<std::int64_t>(c.m), static_cast<std::int64_t>(c.n), std::int64_t{c.nx}, std::int64_t{c.ny},
        std::int64_t{c.schedule.first_minute}, std::int64_t{c.schedule.last_minute},
        std::int64_t{c.schedule.step_minutes}, std::int64_t{c.schedule.slice_minutes}, std::int64_t{c.split.train},
        std::int64_t{c.split.validation}, std::int64_t{c.split.test}}) {
    h.update(v);
  }
}

template <class T>
void put(std::string& out, const T& value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.append(p, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > in.size()) throw ParseError(path, 0, "truncated payload");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void FeatureConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("features." + field + ": " + why);
  };
  if (m < 1) fail("m", "must be at least 1");
  if (n < 1) fail("n", "must be at least 1");
  if (nx < 1) fail("nx", "must be at least 1");
  if (ny < 1) fail("ny", "must be at least 1");
  const auto& s = schedule;
  if (s.step_minutes < 1) fail("step_minutes", "must be at least 1");
  if (s.slice_minutes < 1 || s.slice_minutes % s.step_minutes != 0) {
    fail("slice_minutes", "must be a positive multiple of step_minutes");
  }
  if (s.first_minute > s.last_minute) fail("first_minute", "must not exceed last_minute");
  if ((s.last_minute - s.first_minute) % s.step_minutes != 0) {
    fail("last_minute", "must lie on the tick grid starting at first_minute");
  }
  const int earliest = s.first_minute - static_cast<int>(n - 1) * s.slice_minutes - 60;
  if (earliest < 0) fail("first_minute", "slice lookback reaches into the previous day");
  if (s.last_minute + 5 >= 24 * 60) fail("last_minute", "label window crosses midnight");
  if (split.train < 1) fail("train_days", "must be at least 1");
  if (split.validation < 1) fail("validation_days", "must be at least 1");
  if (split.test < 1) fail("test_days", "must be at least 1");
}

std::uint64_t FeatureConfig::hash() const {
  Fnv1a h;
  h.update(std::string_view("features"));
  add_fields(h, *this);
  return h.digest();
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

SplitBoundaries split_boundaries(const Horizon& horizon, const SplitDays& days) {
  SplitBoundaries b;
  b.validation_start = horizon.start + days.train * sim::kSecondsPerDay;
  b.test_start = b.validation_start + days.validation * sim::kSecondsPerDay;
  b.end = b.test_start + days.test * sim::kSecondsPerDay;
  return b;
}

Split split_of(Timestamp t, const SplitBoundaries& b) {
  if (t >= b.end) throw RangeError("sample time " + std::to_string(t) + " is beyond the last split");
  if (t >= b.test_start) return Split::kTest;
  if (t >= b.validation_start) return Split::kValidation;
  return Split::kTrain;
}

std::vector<Timestamp> schedule_ticks(const Horizon& horizon, const Schedule& schedule) {
  std::vector<Timestamp> ticks;
  for (int day = 0; day < horizon.days; ++day) {
    const Timestamp midnight = horizon.start + day * sim::kSecondsPerDay;
    for (int m = schedule.first_minute; m <= schedule.last_minute; m += schedule.step_minutes) {
      ticks.push_back(midnight + m * sim::kSecondsPerMinute);
    }
  }
  return ticks;
}

SplitSamples split_dataset(std::vector<Sample> samples, const SplitBoundaries& b) {
  if (!(b.validation_start < b.test_start && b.test_start < b.end)) {
    throw ConfigError("split boundaries must be strictly chronological");
  }
  SplitSamples out;
  for (auto& s : samples) {
    switch (split_of(s.sample_time, b)) {
      case Split::kTrain: out.train.push_back(std::move(s)); break;
      case Split::kValidation: out.validation.push_back(std::move(s)); break;
      case Split::kTest: out.test.push_back(std::move(s)); break;
    }
  }
  if (out.train.empty()) throw ConfigError("training split is empty");
  if (out.validation.empty()) throw ConfigError("validation split is empty");
  if (out.test.empty()) throw ConfigError("test split is empty");
  return out;
}

namespace {

struct Labeled {
  DistrictId district;
  std::uint32_t district_index;
  Timestamp time;
  double label;
};

// Every (district, tick) with a defined label, in tick-major order.
std::vector<Labeled> labeled_ticks(const EventIndex& index, std::span<const DistrictId> ids,
                                   std::span<const Timestamp> ticks) {
  std::vector<Labeled> out;
  for (Timestamp t : ticks) {
    for (std::size_t d = 0; d < ids.size(); ++d) {
      const LabelOutcome label = compute_label(index, ids[d], t);
      if (label.unresolved > 0) {
        throw UserError("drain-period violation: " + std::to_string(label.unresolved) +
                        " order(s) of district " + std::to_string(ids[d]) + " created after " + std::to_string(t) +
                        " have no outcome in the event log");
      }
      if (label.minutes) out.push_back({ids[d], static_cast<std::uint32_t>(d), t, *label.minutes});
    }
  }
  return out;
}

std::vector<geo::DistrictGeo> scaled_universe(std::span<const geo::DistrictGeo> districts, int nx, int ny) {
  std::vector<geo::DistrictGeo> out(districts.begin(), districts.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.district_id < b.district_id; });
  geo::scale_coords(out, nx, ny);
  return out;
}

}  // namespace

std::vector<Sample> assemble_samples(std::span<const OrderEvent> events, std::span<const geo::DistrictGeo> districts,
                                     const sim::RegimeCalendar& calendar, const Horizon& horizon,
                                     const FeatureConfig& config) {
  config.validate();
  check_horizon(horizon, config);
  const auto universe = scaled_universe(districts, config.nx, config.ny);
  const auto contexts = geo::build_contexts(universe, config.m, config.nx, config.ny);
  std::vector<DistrictId> ids;
  for (const auto& d : universe) ids.push_back(d.district_id);

  const EventIndex index(events);
  const auto ticks = schedule_ticks(horizon, config.schedule);
  const auto labeled = labeled_ticks(index, ids, ticks);
  const auto bounds = split_boundaries(horizon, config.split);

  std::vector<DistrictId> train_ids;
  for (const auto& l : labeled) {
    if (split_of(l.time, bounds) == Split::kTrain) train_ids.push_back(l.district);
  }
  const Vocabulary vocab = Vocabulary::fit(train_ids);

  std::vector<Sample> samples;
  samples.reserve(labeled.size());
  const Timestamp slice_seconds = config.schedule.slice_minutes * sim::kSecondsPerMinute;
  for (const auto& l : labeled) {
    const auto& ctx = contexts[l.district_index];
    Sample s;
    s.district_id = l.district;
    s.sample_time = l.time;
    s.m = config.m;
    s.n = config.n;
    s.label = l.label;
    s.coords = ctx.relative_coords;
    s.x_b = build_sensitive(l.district, l.time, calendar, vocab);
    s.x_a.resize(config.m * config.n * kFeatureCount);
    for (std::size_t k = 0; k < config.m; ++k) {
      for (std::size_t j = 0; j < config.n; ++j) {
        const Timestamp t = l.time - static_cast<Timestamp>(config.n - 1 - j) * slice_seconds;
        const auto row = raw_row(index, ctx.neighbor_ids[k], t);
        std::copy(row.begin(), row.end(), &s.at(k, j, 0));
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------

Dataset Dataset::build(const DatasetInputs& in) {
  if (in.calendar == nullptr) throw ContractError("Dataset::build requires a calendar");
  in.config.validate();
  check_horizon(in.horizon, in.config);

  Dataset ds;
  ds.config_ = in.config;
  ds.horizon_ = in.horizon;
  ds.events_hash_ = in.events_hash;

  const auto universe = scaled_universe(in.districts, in.config.nx, in.config.ny);
  const auto contexts = geo::build_contexts(universe, in.config.m, in.config.nx, in.config.ny);
  std::map<DistrictId, std::uint32_t> position;
  for (const auto& d : universe) {
    position[d.district_id] = static_cast<std::uint32_t>(ds.district_ids_.size());
    ds.district_ids_.push_back(d.district_id);
  }
  for (const auto& ctx : contexts) {
    std::vector<std::uint32_t> nb;
    for (DistrictId id : ctx.neighbor_ids) nb.push_back(position.at(id));
    ds.neighbors_.push_back(std::move(nb));
    ds.coords_.push_back(ctx.relative_coords);
  }

  const Grid grid = make_grid(in.horizon, in.config);
  ds.grid_origin_minute_ = grid.origin_minute;
  ds.grid_per_day_ = grid.per_day;

  // Raw slice table, one independent partition per district.
  const EventIndex index(in.events);
  const std::size_t cells = grid.size();
  ds.table_.assign(ds.district_ids_.size() * cells * kFeatureCount, 0.0);
  for (std::size_t d = 0; d < ds.district_ids_.size(); ++d) {
    for (std::size_t g = 0; g < cells; ++g) {
      const auto row = raw_row(index, ds.district_ids_[d], grid.time_at(g));
      std::copy(row.begin(), row.end(), ds.table_.begin() + static_cast<std::ptrdiff_t>((d * cells + g) * kFeatureCount));
    }
  }

  const auto ticks = schedule_ticks(in.horizon, in.config.schedule);
  const auto labeled = labeled_ticks(index, ds.district_ids_, ticks);
  const auto bounds = split_boundaries(in.horizon, in.config.split);
  std::vector<DistrictId> train_ids;
  for (const auto& l : labeled) {
    SampleRecord r;
    r.district_id = l.district;
    r.sample_time = l.time;
    r.district_index = l.district_index;
    r.split = split_of(l.time, bounds);
    r.label = l.label;
    if (r.split == Split::kTrain) train_ids.push_back(l.district);
    ds.records_.push_back(r);
  }
  for (Split s : {Split::kTrain, Split::kValidation, Split::kTest}) {
    if (ds.split_size(s) == 0) throw ConfigError(std::string(to_string(s)) + " split is empty");
  }
  ds.vocabulary_ = Vocabulary::fit(train_ids);
  for (auto& r : ds.records_) r.x_b = build_sensitive(r.district_id, r.sample_time, *in.calendar, ds.vocabulary_);

  // Training-split moments over every row a training sample sees.
  NormalizationAccumulator acc;
  const Timestamp slice_seconds = in.config.schedule.slice_minutes * sim::kSecondsPerMinute;
  for (const auto& r : ds.records_) {
    if (r.split != Split::kTrain) continue;
    for (std::size_t k = 0; k < in.config.m; ++k) {
      for (std::size_t j = 0; j < in.config.n; ++j) {
        const Timestamp t = r.sample_time - static_cast<Timestamp>(in.config.n - 1 - j) * slice_seconds;
        acc.add_row(ds.row(ds.neighbors_[r.district_index][k], t));
      }
    }
    acc.add_label(r.label);
  }
  ds.stats_ = acc.finish();
  for (std::size_t i = 0; i < ds.table_.size(); i += kFeatureCount) {
    normalize_row(std::span<double>(ds.table_).subspan(i, kFeatureCount), ds.stats_);
  }
  return ds;
}

std::size_t Dataset::grid_index(Timestamp t) const {
  const Timestamp offset = t - horizon_.start;
  if (offset < 0) throw IndexError("grid time before horizon start");
  const Timestamp day = offset / sim::kSecondsPerDay;
  const Timestamp second = offset % sim::kSecondsPerDay;
  const Timestamp step = static_cast<Timestamp>(config_.schedule.step_minutes) * sim::kSecondsPerMinute;
  const Timestamp rel = second - static_cast<Timestamp>(grid_origin_minute_) * sim::kSecondsPerMinute;
  if (day >= horizon_.days || rel < 0 || rel % step != 0 || static_cast<std::size_t>(rel / step) >= grid_per_day_) {
    throw IndexError("time " + std::to_string(t) + " is not on the dataset grid");
  }
  return static_cast<std::size_t>(day) * grid_per_day_ + static_cast<std::size_t>(rel / step);
}

std::span<const double> Dataset::row(std::size_t district_index, Timestamp t) const {
  if (district_index >= district_ids_.size()) throw IndexError("district index out of range");
  const std::size_t cells = grid_per_day_ * static_cast<std::size_t>(horizon_.days);
  const std::size_t offset = (district_index * cells + grid_index(t)) * kFeatureCount;
  return std::span<const double>(table_).subspan(offset, kFeatureCount);
}

std::vector<std::size_t> Dataset::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t Dataset::split_size(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [split](const SampleRecord& r) { return r.split == split; }));
}

std::size_t Dataset::split_district_count(Split split) const {
  std::set<DistrictId> ids;
  for (const auto& r : records_) {
    if (r.split == split) ids.insert(r.district_id);
  }
  return ids.size();
}

Sample Dataset::materialize(std::size_t record, std::size_t m, std::size_t n) const {
  if (record >= records_.size()) throw IndexError("record index out of range");
  SampleBatch batch;
  const std::size_t one[1] = {record};
  gather(one, m, n, batch);
  const auto& r = records_[record];
  Sample s;
  s.district_id = r.district_id;
  s.sample_time = r.sample_time;
  s.m = m;
  s.n = n;
  s.x_a = std::move(batch.x_a);
  s.x_b = r.x_b;
  s.label = r.label;
  for (std::size_t k = 0; k < m; ++k) s.coords.push_back({static_cast<int>(batch.rel_x[k]), static_cast<int>(batch.rel_y[k])});
  return s;
}

void Dataset::gather(std::span<const std::size_t> records, std::size_t m, std::size_t n, SampleBatch& out) const {
  if (m < 1 || m > config_.m) throw DimensionError("gather: m must be in [1, " + std::to_string(config_.m) + "]");
  if (n < 1 || n > config_.n) throw DimensionError("gather: n must be in [1, " + std::to_string(config_.n) + "]");
  out.size = records.size();
  out.m = m;
  out.n = n;
  out.x_a.resize(records.size() * m * n * kFeatureCount);
  out.rel_x.resize(records.size() * m);
  out.rel_y.resize(records.size() * m);
  out.sensitive.resize(records.size() * kSensitiveCount);
  out.labels.resize(records.size());
  const Timestamp slice_seconds = config_.schedule.slice_minutes * sim::kSecondsPerMinute;
  double* dst = out.x_a.data();
  for (std::size_t b = 0; b < records.size(); ++b) {
    if (records[b] >= records_.size()) throw IndexError("record index out of range");
    const SampleRecord& r = records_[records[b]];
    for (std::size_t k = 0; k < m; ++k) {
      const std::uint32_t nb = neighbors_[r.district_index][k];
      for (std::size_t j = 0; j < n; ++j) {
        const auto row = this->row(nb, r.sample_time - static_cast<Timestamp>(n - 1 - j) * slice_seconds);
        dst = std::copy(row.begin(), row.end(), dst);
      }
      out.rel_x[b * m + k] = coords_[r.district_index][k].x;
      out.rel_y[b * m + k] = coords_[r.district_index][k].y;
    }
    std::copy(r.x_b.begin(), r.x_b.end(), out.sensitive.begin() + static_cast<std::ptrdiff_t>(b * kSensitiveCount));
    out.labels[b] = r.label;
  }
}

// ---------------------------------------------------------------------------
// Serialization: a line-oriented header, a "payload" line, then raw
// little-endian table doubles followed by fixed-width records.

namespace {

std::string serialize(const Dataset& ds, const std::vector<std::vector<std::uint32_t>>& neighbors,
                      const std::vector<std::vector<geo::RelativeCoord>>& coords, std::span<const double> table) {
  std::ostringstream h;
  const auto& c = ds.config();
  h << kMagic << '\n';
  h << "m " << c.m << "\nn " << c.n << "\nd_a " << kFeatureCount << "\nd_b " << kSensitiveCount << '\n';
  h << "nx " << c.nx << "\nny " << c.ny << '\n';
  h << "schedule " << c.schedule.first_minute << ' ' << c.schedule.last_minute << ' ' << c.schedule.step_minutes
    << ' ' << c.schedule.slice_minutes << '\n';
  h << "split_days " << c.split.train << ' ' << c.split.validation << ' ' << c.split.test << '\n';
  h << "horizon " << ds.horizon().start << ' ' << ds.horizon().days << '\n';
  h << "feature_order_hash " << to_hex(feature_order_hash()) << '\n';
  h << "feature_config_hash " << to_hex(c.hash()) << '\n';
  h << "events_hash " << to_hex(ds.events_hash()) << '\n';
  h << "stats_hash " << to_hex(ds.stats().hash()) << '\n';
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    h << "stat " << f << ' ' << hexfloat(ds.stats().mean[f]) << ' ' << hexfloat(ds.stats().stddev[f]) << ' '
      << (ds.stats().constant[f] ? 1 : 0) << '\n';
  }
  h << "label_stat " << hexfloat(ds.stats().label_mean) << ' ' << hexfloat(ds.stats().label_stddev) << '\n';
  for (const auto& [raw, id] : ds.vocabulary().cities()) h << "vocab_city " << raw << ' ' << id << '\n';
  for (const auto& [raw, id] : ds.vocabulary().districts()) h << "vocab_district " << raw << ' ' << id << '\n';
  for (const auto& [raw, city] : ds.vocabulary().district_city()) h << "district_city " << raw << ' ' << city << '\n';
  const auto& ids = ds.district_ids();
  for (std::size_t d = 0; d < ids.size(); ++d) {
    h << "district " << ids[d];
    for (std::size_t k = 0; k < neighbors[d].size(); ++k) {
      h << ' ' << neighbors[d][k] << ':' << coords[d][k].x << ':' << coords[d][k].y;
    }
    h << '\n';
  }
  h << "table_rows " << table.size() / kFeatureCount << '\n';
  h << "records " << ds.records().size() << '\n';
  h << "payload\n";
  std::string out = h.str();
  out.reserve(out.size() + table.size() * sizeof(double) + ds.records().size() * 80);
  out.append(reinterpret_cast<const char*>(table.data()), table.size() * sizeof(double));
  for (const auto& r : ds.records()) {
    put(out, r.district_id);
    put(out, r.sample_time);
    put(out, r.district_index);
    put(out, static_cast<std::uint8_t>(r.split));
    for (std::int64_t id : r.x_b) put(out, id);
    put(out, r.label);
  }
  return out;
}

}  // namespace

void Dataset::save(const std::string& path) const {
  const std::string bytes = serialize(*this, neighbors_, coords_, table_);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write dataset " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UserError("failed writing dataset " + path);
}

std::uint64_t Dataset::fingerprint() const {
  const std::string bytes = serialize(*this, neighbors_, coords_, table_);
  Fnv1a h;
  h.update(std::string_view(bytes));
  return h.digest();
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open dataset " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Dataset ds;
  std::map<std::int64_t, std::int64_t> cities;
  std::map<DistrictId, std::int64_t> districts, district_city;
  std::size_t pos = 0, line_no = 0, table_rows = 0, record_count = 0, stat_count = 0;
  std::string declared_stats, declared_config;
  bool payload = false;
  while (pos < bytes.size()) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw ParseError(path, line_no + 1, "unterminated header");
    const std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kMagic) throw ParseError(path, 1, "not an sttm dataset");
      continue;
    }
    if (line == "payload") {
      payload = true;
      break;
    }
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    auto bad = [&](const std::string& what) { return ParseError(path, line_no, what); };
    if (key == "m") ss >> ds.config_.m;
    else if (key == "n") ss >> ds.config_.n;
    else if (key == "d_a") {
      std::size_t v = 0;
      ss >> v;
      if (v != kFeatureCount) throw CompatibilityError(path + ": dataset has " + std::to_string(v) + " features");
    } else if (key == "d_b") {
      std::size_t v = 0;
      ss >> v;
      if (v != kSensitiveCount) throw CompatibilityError(path + ": dataset has " + std::to_string(v) + " sensitive ids");
    } else if (key == "nx") ss >> ds.config_.nx;
    else if (key == "ny") ss >> ds.config_.ny;
    else if (key == "schedule") {
      auto& s = ds.config_.schedule;
      ss >> s.first_minute >> s.last_minute >> s.step_minutes >> s.slice_minutes;
    } else if (key == "split_days") {
      ss >> ds.config_.split.train >> ds.config_.split.validation >> ds.config_.split.test;
    } else if (key == "horizon") {
      ss >> ds.horizon_.start >> ds.horizon_.days;
    } else if (key == "feature_order_hash") {
      std::string hex;
      ss >> hex;
      if (hex != to_hex(feature_order_hash())) throw CompatibilityError(path + ": feature order hash mismatch");
    } else if (key == "feature_config_hash") {
      ss >> declared_config;
    } else if (key == "events_hash") {
      std::string hex;
      ss >> hex;
      ds.events_hash_ = std::stoull(hex, nullptr, 16);
    } else if (key == "stats_hash") {
      ss >> declared_stats;
    } else if (key == "stat") {
      std::size_t f = 0;
      std::string mean, sd;
      int constant = 0;
      ss >> f >> mean >> sd >> constant;
      if (!ss || f != stat_count || f >= kFeatureCount) throw bad("malformed stat record");
      ds.stats_.mean[f] = std::strtod(mean.c_str(), nullptr);
      ds.stats_.stddev[f] = std::strtod(sd.c_str(), nullptr);
      ds.stats_.constant[f] = constant != 0;
      ++stat_count;
    } else if (key == "label_stat") {
      std::string mean, sd;
      ss >> mean >> sd;
      ds.stats_.label_mean = std::strtod(mean.c_str(), nullptr);
      ds.stats_.label_stddev = std::strtod(sd.c_str(), nullptr);
    } else if (key == "vocab_city") {
      std::int64_t raw = 0, id = 0;
      ss >> raw >> id;
      cities[raw] = id;
    } else if (key == "vocab_district") {
      std::int64_t raw = 0, id = 0;
      ss >> raw >> id;
      districts[raw] = id;
    } else if (key == "district_city") {
      std::int64_t raw = 0, city = 0;
      ss >> raw >> city;
      district_city[raw] = city;
    } else if (key == "district") {
      DistrictId id = 0;
      ss >> id;
      std::vector<std::uint32_t> nb;
      std::vector<geo::RelativeCoord> co;
      std::string tok;
      while (ss >> tok) {
        unsigned idx = 0;
        int x = 0, y = 0;
        if (std::sscanf(tok.c_str(), "%u:%d:%d", &idx, &x, &y) != 3) throw bad("malformed neighbor '" + tok + "'");
        nb.push_back(idx);
        co.push_back({x, y});
      }
      if (ss.eof()) ss.clear();
      ds.district_ids_.push_back(id);
      ds.neighbors_.push_back(std::move(nb));
      ds.coords_.push_back(std::move(co));
    } else if (key == "table_rows") {
      ss >> table_rows;
    } else if (key == "records") {
      ss >> record_count;
    } else {
      throw bad("unknown header key '" + key + "'");
    }
    if (ss.fail()) throw bad("malformed value for '" + key + "'");
  }
  if (!payload) throw ParseError(path, line_no, "missing payload");
  if (stat_count != kFeatureCount) throw ParseError(path, line_no, "incomplete normalization stats");
  if (declared_stats != to_hex(ds.stats_.hash())) throw CompatibilityError(path + ": stats hash mismatch");
  ds.config_.validate();
  if (declared_config != to_hex(ds.config_.hash())) throw CompatibilityError(path + ": feature config hash mismatch");
  for (const auto& nb : ds.neighbors_) {
    if (nb.size() != ds.config_.m) throw ParseError(path, line_no, "neighbor list length differs from m");
    for (auto idx : nb) {
      if (idx >= ds.district_ids_.size()) throw ParseError(path, line_no, "neighbor index out of range");
    }
  }
  ds.vocabulary_ = Vocabulary::from_maps(std::move(cities), std::move(districts), std::move(district_city));
  const Grid grid = make_grid(ds.horizon_, ds.config_);
  ds.grid_origin_minute_ = grid.origin_minute;
  ds.grid_per_day_ = grid.per_day;
  if (table_rows != ds.district_ids_.size() * grid.size()) throw ParseError(path, line_no, "table size mismatch");

  const std::size_t table_bytes = table_rows * kFeatureCount * sizeof(double);
  if (pos + table_bytes > bytes.size()) throw ParseError(path, line_no, "truncated table payload");
  ds.table_.resize(table_rows * kFeatureCount);
  std::memcpy(ds.table_.data(), bytes.data() + pos, table_bytes);
  pos += table_bytes;
  ds.records_.resize(record_count);
  for (auto& r : ds.records_) {
    r.district_id = take<DistrictId>(bytes, pos, path);
    r.sample_time = take<Timestamp>(bytes, pos, path);
    r.district_index = take<std::uint32_t>(bytes, pos, path);
    const auto split = take<std::uint8_t>(bytes, pos, path);
    if (split > 2) throw ParseError(path, line_no, "bad split tag in record payload");
    r.split = static_cast<Split>(split);
    for (auto& id : r.x_b) id = take<std::int64_t>(bytes, pos, path);
    r.label = take<double>(bytes, pos, path);
    if (r.district_index >= ds.district_ids_.size()) throw ParseError(path, line_no, "record district out of range");
  }
  if (pos != bytes.size()) throw ParseError(path, line_no, "trailing bytes after payload");
  return ds;
}

}  // namespace sttm::features
