#include "sttm/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

template <std::size_t N>
std::array<double, N> parse_list(std::string_view key, std::string_view v) {
  std::array<double, N> out{};
  std::size_t i = 0;
  while (true) {
    const auto comma = v.find(',');
    if (i == N) throw ConfigError(std::string(key) + ": expected " + std::to_string(N) + " values");
    out[i++] = parse_double(key, trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (i != N) throw ConfigError(std::string(key) + ": expected " + std::to_string(N) + " values");
  return out;
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <std::size_t N>
std::string list(const std::array<double, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + number(a[i]);
  return out;
}

struct Field {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
Field integer(std::string_view key, Access access) {
  return {key, [access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_integer<T>(k, v); },
          [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field real(std::string_view key, Access access) {
  return {key, [access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_double(k, v); },
          [access](const RunConfig& c) { return number(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field boolean(std::string_view key, Access access) {
  return {key, [access](RunConfig& c, std::string_view k, std::string_view v) { access(c) = parse_bool(k, v); },
          [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Access>
Field reals(std::string_view key, Access access) {
  return {key,
          [access](RunConfig& c, std::string_view k, std::string_view v) {
            auto& a = access(c);
            a = parse_list<std::tuple_size_v<std::remove_reference_t<decltype(a)>>>(k, v);
          },
          [access](const RunConfig& c) { return list(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field text(std::string_view key, Access access) {
  return {key,
          [access](RunConfig& c, std::string_view k, std::string_view v) {
            if (v.empty()) throw ConfigError(std::string(k) + ": must not be empty");
            access(c) = std::string(v);
          },
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); }};
}

#define STTM_FIELD(kind, type, key, member) kind<type>(key, [](RunConfig& c) -> auto& { return c.member; })
#define STTM_FIELD1(kind, key, member) kind(key, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      STTM_FIELD1(integer<std::uint64_t>, "seed", seed),

      STTM_FIELD(integer, std::size_t, "sim.district_count", sim.district_count),
      STTM_FIELD(integer, int, "sim.days", sim.days),
      STTM_FIELD(integer, std::int64_t, "sim.start_time", sim.start_time),
      STTM_FIELD(integer, int, "sim.open_minute", sim.open_minute),
      STTM_FIELD(integer, int, "sim.close_minute", sim.close_minute),
      STTM_FIELD1(real, "sim.base_order_rate", sim.base_order_rate),
      STTM_FIELD1(real, "sim.rate_spread", sim.rate_spread),
      STTM_FIELD1(reals, "sim.peak_multipliers", sim.peak_multipliers),
      STTM_FIELD1(reals, "sim.weather_delay", sim.weather_delay),
      STTM_FIELD1(reals, "sim.weather_capacity", sim.weather_capacity),
      STTM_FIELD1(real, "sim.median_duration_minutes", sim.median_duration_minutes),
      STTM_FIELD1(real, "sim.duration_sigma", sim.duration_sigma),
      STTM_FIELD1(real, "sim.district_duration_spread", sim.district_duration_spread),
      STTM_FIELD1(real, "sim.rider_capacity", sim.rider_capacity),
      STTM_FIELD1(real, "sim.congestion", sim.congestion),
      STTM_FIELD1(real, "sim.demand_sigma", sim.demand_sigma),
      STTM_FIELD1(real, "sim.demand_persistence", sim.demand_persistence),
      STTM_FIELD1(real, "sim.weather_events_per_day", sim.weather_events_per_day),
      STTM_FIELD(integer, std::size_t, "sim.weather_span", sim.weather_span),
      STTM_FIELD1(real, "sim.cancel_base", sim.cancel_base),
      STTM_FIELD1(real, "sim.city_lng", sim.city_lng),
      STTM_FIELD1(real, "sim.city_lat", sim.city_lat),
      STTM_FIELD1(real, "sim.city_radius_km", sim.city_radius_km),
      STTM_FIELD(integer, std::uint64_t, "sim.seed", sim.seed),

      STTM_FIELD(integer, std::size_t, "features.m", features.m),
      STTM_FIELD(integer, std::size_t, "features.n", features.n),
      STTM_FIELD(integer, int, "features.nx", features.nx),
      STTM_FIELD(integer, int, "features.ny", features.ny),
      STTM_FIELD(integer, int, "features.first_minute", features.schedule.first_minute),
      STTM_FIELD(integer, int, "features.last_minute", features.schedule.last_minute),
      STTM_FIELD(integer, int, "features.step_minutes", features.schedule.step_minutes),
      STTM_FIELD(integer, int, "features.slice_minutes", features.schedule.slice_minutes),
      STTM_FIELD(integer, int, "features.train_days", features.split.train),
      STTM_FIELD(integer, int, "features.validation_days", features.split.validation),
      STTM_FIELD(integer, int, "features.test_days", features.split.test),

      STTM_FIELD(integer, std::size_t, "model.m", model.m),
      STTM_FIELD(integer, std::size_t, "model.n", model.n),
      STTM_FIELD(integer, std::size_t, "model.h", model.hidden),
      STTM_FIELD(integer, std::size_t, "model.l", model.layers),
      STTM_FIELD(integer, std::size_t, "model.e", model.embed),
      STTM_FIELD(integer, std::size_t, "model.h_mem", model.mem_hidden),
      STTM_FIELD(integer, std::size_t, "model.l_mem", model.mem_patterns),
      STTM_FIELD(integer, std::size_t, "model.d_mem", model.mem_dim),
      STTM_FIELD(integer, std::size_t, "model.heads", model.heads),
      STTM_FIELD(integer, std::size_t, "model.ffn", model.ffn),
      STTM_FIELD1(real, "model.dropout", model.dropout),
      STTM_FIELD(integer, std::size_t, "model.mlp_hidden", model.mlp_hidden),
      Field{"model.variant",
            [](RunConfig& c, std::string_view, std::string_view v) { c.model.variant = model::parse_variant(v); },
            [](const RunConfig& c) { return std::string(model::to_string(c.model.variant)); }},

      STTM_FIELD1(real, "train.learning_rate", train.learning_rate),
      STTM_FIELD(integer, std::size_t, "train.batch_size", train.batch_size),
      STTM_FIELD(integer, int, "train.epochs", train.epochs),
      STTM_FIELD1(boolean, "train.shuffle", train.shuffle),
      STTM_FIELD(integer, std::size_t, "train.validation_every", train.validation_every),
      STTM_FIELD1(boolean, "train.select_best", train.select_best),
      STTM_FIELD1(real, "train.clip_norm", train.clip_norm),
      STTM_FIELD(integer, std::size_t, "train.micro_batch", train.micro_batch),
      STTM_FIELD(integer, std::size_t, "train.max_steps", train.max_steps),

      STTM_FIELD1(real, "eval.anomaly_threshold", train.anomaly_threshold),
      Field{"eval.split",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "train") c.eval.split = features::Split::kTrain;
              else if (v == "validation") c.eval.split = features::Split::kValidation;
              else if (v == "test") c.eval.split = features::Split::kTest;
              else throw ConfigError(std::string(k) + ": expected train, validation or test, got '" + std::string(v) + "'");
            },
            [](const RunConfig& c) { return std::string(features::to_string(c.eval.split)); }},

      STTM_FIELD1(text, "paths.events", paths.events),
      STTM_FIELD1(text, "paths.districts", paths.districts),
      STTM_FIELD1(text, "paths.dataset", paths.dataset),
      STTM_FIELD1(text, "paths.stats", paths.stats),
      STTM_FIELD1(text, "paths.manifest", paths.manifest),
      STTM_FIELD1(text, "paths.checkpoint", paths.checkpoint),
      STTM_FIELD1(text, "paths.train_log", paths.train_log),
      STTM_FIELD1(text, "paths.reports", paths.reports),
  };
  return table;
}

#undef STTM_FIELD
#undef STTM_FIELD1

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
  sim.validate();
  features.validate();
  model.validate();
  train.validate();
}

std::uint64_t RunConfig::hash() const {
  Fnv1a h;
  for (const auto& f : fields()) {
    if (f.key.starts_with("paths.")) continue;
    h.update(f.key);
    h.update(f.get(*this));
  }
  return h.digest();
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  find_field(key).set(config, key, trim(value));
}

std::string get_config_value(const RunConfig& config, std::string_view key) { return find_field(key).get(config); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text.remove_prefix(eol == std::string_view::npos ? text.size() : eol + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected 'key = value'");
    try {
      set_config_value(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ParseError(source, line_no, e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string format_config(const RunConfig& config) {
  std::string out;
  std::string_view section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string_view s = dot == std::string_view::npos ? std::string_view() : f.key.substr(0, dot);
    if (!out.empty() && s != section) out += "\n";
    section = s;
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace sttm
