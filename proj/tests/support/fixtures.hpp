#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sttm/dataset.hpp"
#include "sttm/model.hpp"
#include "sttm/run_config.hpp"
#include "sttm/simulator.hpp"

namespace sttm::testing {

// H=8, N=2, M=3, 2 heads, L_mem=4, D_mem=4, E=2; dropout off.
model::SttmConfig tiny_model_config();

// Random inputs respecting the config's coordinate and vocabulary ranges.
features::SampleBatch random_batch(const model::SttmConfig& config, std::size_t size, std::uint64_t seed);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double worst_numeric = 0.0;
  double worst_analytic = 0.0;
  std::size_t checked = 0;
};

// Gradients smaller than this are compared absolutely. Rounding of an O(10) loss puts
// roughly 1e-10 of noise on a central difference with step 1e-5.
inline constexpr double kGradientFloor = 1e-5;
inline constexpr double kMinimumStep = 1e-8;

// Central differences on every parameter entry (up to `per_tensor` entries each) of the
// MAE training loss against the reverse-mode gradient. Entries whose stencil straddles
// a kink are re-differenced with smaller steps.
GradientCheck check_gradients(model::SttmModel& model, const features::SampleBatch& batch, double step = 1e-5,
                              std::size_t per_tensor = 0);

// Feature values recomputed by scanning every event, no indexing.
std::array<double, features::kFeatureCount> brute_force_features(std::span<const sim::OrderEvent> events,
                                                                 geo::DistrictId district, sim::Timestamp t);
std::optional<double> brute_force_label(std::span<const sim::OrderEvent> events, geo::DistrictId district,
                                        sim::Timestamp t);

// A small simulated city: 8 districts over 5 days (3/1/1 split), m = 4, n = 3.
RunConfig small_run_config();

struct SmallWorld {
  std::vector<geo::DistrictGeo> districts;
  sim::SimulationOutput simulation;
  features::Dataset dataset;
};
SmallWorld build_small_world(const RunConfig& config);

class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Runs a shell command and captures stdout+stderr.
struct CommandResult {
  int exit_code = -1;
  std::string output;
};
CommandResult run_command(const std::string& command);

}  // namespace sttm::testing
