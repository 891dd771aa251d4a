#include "sttm/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "sttm/errors.hpp"

namespace sttm::geo {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

int scale_value(double v, double lo, double hi, int n) {
  const double scaled = static_cast<double>(n) * (v - lo) / (hi - lo);
  // truncation toward zero, then clamp into [0, n)
  const double truncated = std::trunc(scaled);
  if (truncated <= 0.0) return 0;
  if (truncated >= static_cast<double>(n - 1)) return n - 1;
  return static_cast<int>(truncated);
}

}  // namespace

PlanarPoint mercator_project(double lng_degrees, double lat_degrees) {
  if (!(std::fabs(lat_degrees) < kMaxLatitudeDegrees)) {
    throw DomainError("latitude " + std::to_string(lat_degrees) + " outside Mercator band (-85.05, 85.05)");
  }
  const double lambda = lng_degrees * std::numbers::pi / 180.0;
  const double phi = lat_degrees * std::numbers::pi / 180.0;
  return {kEarthRadiusMeters * lambda, kEarthRadiusMeters * std::log(std::tan(std::numbers::pi / 4.0 + phi / 2.0))};
}

DistrictGeo make_district(DistrictId id, double lng_degrees, double lat_degrees) {
  const PlanarPoint p = mercator_project(lng_degrees, lat_degrees);
  DistrictGeo d;
  d.district_id = id;
  d.raw_lng = lng_degrees;
  d.raw_lat = lat_degrees;
  d.planar_x = p.x;
  d.planar_y = p.y;
  return d;
}

std::vector<DistrictGeo> load_districts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open district file " + path);
  std::vector<DistrictGeo> out;
  std::set<DistrictId> seen;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      std::string compact;
      for (char c : line)
        if (c != ' ' && c != '\t' && c != '\r') compact += c;
      if (compact != "district_id,lng_degrees,lat_degrees") {
        throw ParseError(path, line_no, "expected header 'district_id,lng_degrees,lat_degrees'");
      }
      continue;
    }
    std::stringstream ss(line);
    std::string fields[3];
    std::size_t count = 0;
    std::string field;
    while (std::getline(ss, field, ',')) {
      if (count < 3) fields[count] = trim(field);
      ++count;
    }
    if (count != 3) throw ParseError(path, line_no, "expected 3 comma-separated fields");
    try {
      std::size_t used = 0;
      const DistrictId id = std::stoll(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("id");
      const double lng = std::stod(fields[1]);
      const double lat = std::stod(fields[2]);
      if (!seen.insert(id).second) throw ParseError(path, line_no, "duplicate district id " + fields[0]);
      out.push_back(make_district(id, lng, lat));
    } catch (const std::invalid_argument&) {
      throw ParseError(path, line_no, "malformed number");
    } catch (const std::out_of_range&) {
      throw ParseError(path, line_no, "number out of range");
    } catch (const DomainError& e) {
      throw ParseError(path, line_no, e.what());
    }
  }
  if (!header_seen) throw ParseError(path, 1, "missing header row");
  return out;
}

void write_districts(const std::string& path, std::span<const DistrictGeo> districts) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write district file " + path);
  out << "district_id,lng_degrees,lat_degrees\n";
  out.precision(17);
  for (const auto& d : districts) out << d.district_id << ',' << d.raw_lng << ',' << d.raw_lat << '\n';
}

CoordinateScaler CoordinateScaler::fit(std::span<const DistrictGeo> districts, int n_x, int n_y) {
  if (n_x < 1 || n_y < 1) throw ConfigError("scale factors must be positive");
  if (districts.empty()) throw ConfigError("cannot fit coordinate scaler on zero districts");
  CoordinateScaler s;
  s.n_x_ = n_x;
  s.n_y_ = n_y;
  auto [min_x, max_x] = std::minmax_element(districts.begin(), districts.end(),
                                            [](const auto& a, const auto& b) { return a.planar_x < b.planar_x; });
  auto [min_y, max_y] = std::minmax_element(districts.begin(), districts.end(),
                                            [](const auto& a, const auto& b) { return a.planar_y < b.planar_y; });
  s.min_x_ = min_x->planar_x;
  s.max_x_ = max_x->planar_x;
  s.min_y_ = min_y->planar_y;
  s.max_y_ = max_y->planar_y;
  if (!(s.max_x_ > s.min_x_) || !(s.max_y_ > s.min_y_)) {
    throw DomainError("degenerate district extent: all districts share one planar coordinate value");
  }
  return s;
}

int CoordinateScaler::scale_x(double planar_x) const { return scale_value(planar_x, min_x_, max_x_, n_x_); }
int CoordinateScaler::scale_y(double planar_y) const { return scale_value(planar_y, min_y_, max_y_, n_y_); }

void CoordinateScaler::apply(std::vector<DistrictGeo>& districts) const {
  for (auto& d : districts) {
    d.scaled_x = scale_x(d.planar_x);
    d.scaled_y = scale_y(d.planar_y);
  }
}

CoordinateScaler scale_coords(std::vector<DistrictGeo>& districts, int n_x, int n_y) {
  auto scaler = CoordinateScaler::fit(districts, n_x, n_y);
  scaler.apply(districts);
  return scaler;
}

NeighborMap nearest_neighbors(std::span<const DistrictGeo> districts, std::size_t count) {
  if (count < 1 || count > districts.size()) {
    throw ConfigError("neighbor count M=" + std::to_string(count) + " must lie in [1, " +
                      std::to_string(districts.size()) + "]");
  }
  NeighborMap result;
  std::vector<std::pair<double, DistrictId>> candidates;
  for (const auto& center : districts) {
    candidates.clear();
    for (const auto& other : districts) {
      if (other.district_id == center.district_id) continue;
      const double dx = other.planar_x - center.planar_x;
      const double dy = other.planar_y - center.planar_y;
      candidates.emplace_back(dx * dx + dy * dy, other.district_id);
    }
    const std::size_t wanted = count - 1;
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(wanted), candidates.end());
    std::vector<DistrictId> ids{center.district_id};
    for (std::size_t i = 0; i < wanted; ++i) ids.push_back(candidates[i].second);
    result.emplace(center.district_id, std::move(ids));
  }
  return result;
}

std::map<DistrictId, DistrictGeo> index_by_id(std::span<const DistrictGeo> districts) {
  std::map<DistrictId, DistrictGeo> out;
  for (const auto& d : districts) out.emplace(d.district_id, d);
  return out;
}

std::vector<RelativeCoord> relative_coords(std::span<const DistrictId> neighbor_ids,
                                           const std::map<DistrictId, DistrictGeo>& by_id, int n_x, int n_y) {
  if (neighbor_ids.empty()) return {};
  auto lookup = [&](DistrictId id) -> const DistrictGeo& {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw IndexError("no geo record for district " + std::to_string(id));
    return it->second;
  };
  const DistrictGeo& center = lookup(neighbor_ids[0]);
  std::vector<RelativeCoord> out;
  out.reserve(neighbor_ids.size());
  for (DistrictId id : neighbor_ids) {
    const DistrictGeo& d = lookup(id);
    out.push_back({d.scaled_x - center.scaled_x + n_x, d.scaled_y - center.scaled_y + n_y});
  }
  return out;
}

std::vector<NeighborContext> build_contexts(std::span<const DistrictGeo> districts, std::size_t m, int n_x,
                                            int n_y) {
  const NeighborMap neighbors = nearest_neighbors(districts, m);
  const auto by_id = index_by_id(districts);
  std::vector<NeighborContext> out;
  out.reserve(neighbors.size());
  for (const auto& [center, ids] : neighbors) {
    out.push_back({center, ids, relative_coords(ids, by_id, n_x, n_y)});
  }
  return out;
}

}  // namespace sttm::geo
