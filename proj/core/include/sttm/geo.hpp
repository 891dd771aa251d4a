#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sttm::geo {

using DistrictId = std::int64_t;

inline constexpr double kEarthRadiusMeters = 6378137.0;
// Open latitude band in which spherical Mercator is accepted.
inline constexpr double kMaxLatitudeDegrees = 85.05;

struct PlanarPoint {
  double x = 0.0;
  double y = 0.0;
};

// Spherical Mercator; throws DomainError outside the latitude band.
PlanarPoint mercator_project(double lng_degrees, double lat_degrees);

struct DistrictGeo {
  DistrictId district_id = 0;
  double raw_lng = 0.0;
  double raw_lat = 0.0;
  double planar_x = 0.0;
  double planar_y = 0.0;
  int scaled_x = 0;
  int scaled_y = 0;
};

DistrictGeo make_district(DistrictId id, double lng_degrees, double lat_degrees);

// CSV with header row: district_id,lng_degrees,lat_degrees
std::vector<DistrictGeo> load_districts(const std::string& path);
void write_districts(const std::string& path, std::span<const DistrictGeo> districts);

// Min/max extent of the training district universe, frozen after fit().
class CoordinateScaler {
 public:
  static CoordinateScaler fit(std::span<const DistrictGeo> districts, int n_x, int n_y);

  int scale_x(double planar_x) const;
  int scale_y(double planar_y) const;
  void apply(std::vector<DistrictGeo>& districts) const;

  int n_x() const noexcept { return n_x_; }
  int n_y() const noexcept { return n_y_; }
  double min_x() const noexcept { return min_x_; }
  double max_x() const noexcept { return max_x_; }
  double min_y() const noexcept { return min_y_; }
  double max_y() const noexcept { return max_y_; }

 private:
  double min_x_ = 0.0, max_x_ = 0.0, min_y_ = 0.0, max_y_ = 0.0;
  int n_x_ = 0, n_y_ = 0;
};

// Fits on `districts` and writes scaled_x / scaled_y in place.
CoordinateScaler scale_coords(std::vector<DistrictGeo>& districts, int n_x, int n_y);

using NeighborMap = std::map<DistrictId, std::vector<DistrictId>>;

// Each district first, then its count-1 nearest others by planar Euclidean
// distance; equal distances resolve by ascending district id.
NeighborMap nearest_neighbors(std::span<const DistrictGeo> districts, std::size_t count);

struct RelativeCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const RelativeCoord&, const RelativeCoord&) = default;
};

// Offsets of every neighbor's scaled coordinates from the first id (the center),
// shifted by (n_x, n_y) so the center maps to (n_x, n_y).
std::vector<RelativeCoord> relative_coords(std::span<const DistrictId> neighbor_ids,
                                           const std::map<DistrictId, DistrictGeo>& by_id, int n_x, int n_y);

struct NeighborContext {
  DistrictId center_id = 0;
  std::vector<DistrictId> neighbor_ids;
  std::vector<RelativeCoord> relative_coords;
};

std::map<DistrictId, DistrictGeo> index_by_id(std::span<const DistrictGeo> districts);

// Contexts for every district of an already-scaled universe.
std::vector<NeighborContext> build_contexts(std::span<const DistrictGeo> districts, std::size_t m, int n_x,
                                            int n_y);

}  // namespace sttm::geo
