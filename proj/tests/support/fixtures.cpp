#include "fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <sys/wait.h>
#include <unistd.h>

#include "sttm/hash.hpp"
#include "sttm/numerics.hpp"
#include "sttm/training.hpp"

namespace sttm::testing {

model::SttmConfig tiny_model_config() {
  model::SttmConfig c;
  c.m = 3;
  c.n = 2;
  c.nx = 4;
  c.ny = 4;
  c.hidden = 8;
  c.layers = 1;
  c.embed = 2;
  c.mem_hidden = 8;
  c.mem_patterns = 4;
  c.mem_dim = 4;
  c.heads = 2;
  c.dropout = 0.0;
  c.mlp_hidden = 8;
  c.vocab = {2, 5, 1441, 6, 8, 4};
  return c;
}

features::SampleBatch random_batch(const model::SttmConfig& c, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  features::SampleBatch b;
  b.size = size;
  b.m = c.m;
  b.n = c.n;
  b.x_a.resize(size * c.m * c.n * c.d_a);
  for (double& v : b.x_a) v = normal(rng);
  for (std::size_t i = 0; i < size * c.m; ++i) {
    const bool center = i % c.m == 0;
    b.rel_x.push_back(center ? c.nx : std::uniform_int_distribution<std::int64_t>(0, 2 * c.nx - 1)(rng));
    b.rel_y.push_back(center ? c.ny : std::uniform_int_distribution<std::int64_t>(0, 2 * c.ny - 1)(rng));
  }
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t s = 0; s < c.vocab.size(); ++s) {
      b.sensitive.push_back(
          std::uniform_int_distribution<std::int64_t>(0, static_cast<std::int64_t>(c.vocab[s]) - 1)(rng));
    }
    b.labels.push_back(20.0 + 10.0 * normal(rng));
  }
  return b;
}

GradientCheck check_gradients(model::SttmModel& model, const features::SampleBatch& batch, double step,
                              std::size_t per_tensor) {
  const auto labels = numerics::Tensor::from({batch.size}, batch.labels);
  auto objective = [&] {
    numerics::NoGradGuard guard;
    return training::mae_loss(model.forward(batch, false), labels).item();
  };
  for (auto& [name, t] : model.named_parameters()) t.clear_grad();
  numerics::backward(training::mae_loss(model.forward(batch, false), labels));

  GradientCheck out;
  for (auto& [name, t] : model.named_parameters()) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    const std::size_t count = per_tensor == 0 ? values.size() : std::min(per_tensor, values.size());
    const std::size_t stride = std::max<std::size_t>(1, values.size() / count);
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      auto central = [&](double h) {
        values[i] = saved + h;
        const double up = objective();
        values[i] = saved - h;
        const double down = objective();
        values[i] = saved;
        return (up - down) / (2.0 * h);
      };
      // A ReLU or |.| kink inside the stencil shows up as disagreement between two
      // step sizes; shrink the step until the differences are consistent.
      double h = step;
      double numeric = central(h);
      while (h > kMinimumStep) {
        const double finer = central(h / 10.0);
        if (std::abs(finer - numeric) <= 1e-5 * std::max(std::abs(finer), std::abs(numeric)) + 1e-8) break;
        numeric = finer;
        h /= 10.0;
      }
      const double err =
          std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), kGradientFloor});
      if (err > out.max_relative_error) {
        out.max_relative_error = err;
        out.worst_parameter = name + "[" + std::to_string(i) + "]";
        out.worst_numeric = numeric;
        out.worst_analytic = analytic[i];
      }
      ++out.checked;
    }
    t.clear_grad();
  }
  return out;
}

namespace {

bool by(const std::optional<sim::Timestamp>& stamp, sim::Timestamp t) { return stamp && *stamp <= t; }
bool within(sim::Timestamp x, sim::Timestamp t, int minutes) { return x > t - minutes * 60 && x <= t; }

}  // namespace

std::array<double, features::kFeatureCount> brute_force_features(std::span<const sim::OrderEvent> events,
                                                                 geo::DistrictId district, sim::Timestamp t) {
  std::array<double, features::kFeatureCount> v{};
  std::vector<const sim::OrderEvent*> mine;
  for (const auto& e : events) {
    if (e.district_id == district) mine.push_back(&e);
  }
  auto count = [&](auto pred) {
    double c = 0;
    for (const auto* e : mine) c += pred(*e) ? 1 : 0;
    return c;
  };
  auto rate = [](double num, double den) { return den == 0 ? -1.0 : num / den; };
  std::size_t f = 0;
  for (auto stage : {&sim::OrderEvent::arrived_store_at, &sim::OrderEvent::picked_up_at,
                     &sim::OrderEvent::accepted_at}) {
    for (int threshold : {0, 8, 15}) {
      v[f++] = count([&](const sim::OrderEvent& e) {
        return within(e.created_at, t, 60) && !by(e.canceled_at, t) && !by(e.*stage, t) &&
               t - e.created_at > threshold * 60;
      });
    }
  }
  for (int w : {10, 30, 60}) {
    v[f++] = count([&](const sim::OrderEvent& e) {
      return within(e.created_at, t, w) && !by(e.delivered_at, t) && !by(e.canceled_at, t);
    });
  }
  for (int w : {10, 30, 45, 60}) {
    v[f++] = count([&](const sim::OrderEvent& e) { return e.delivered_at && within(*e.delivered_at, t, w); });
  }
  for (int w : {5, 10}) {
    v[f++] = count([&](const sim::OrderEvent& e) { return e.canceled_at && within(*e.canceled_at, t, w); });
  }
  for (int w : {3, 5, 10, 15, 30}) {
    v[f++] = rate(count([&](const sim::OrderEvent& e) { return within(e.created_at, t, w) && by(e.accepted_at, t); }),
                  count([&](const sim::OrderEvent& e) { return within(e.created_at, t, w); }));
  }
  for (int w : {30, 60}) {
    v[f++] = rate(count([&](const sim::OrderEvent& e) { return within(e.created_at, t, w) && by(e.delivered_at, t); }),
                  count([&](const sim::OrderEvent& e) { return within(e.created_at, t, w); }));
  }
  for (int w : {10, 30, 45, 60}) {
    auto done = [&](const sim::OrderEvent& e) { return e.delivered_at && within(*e.delivered_at, t, w); };
    v[f++] = rate(count([&](const sim::OrderEvent& e) { return done(e) && *e.delivered_at - e.created_at <= 2400; }),
                  count(done));
  }
  for (int w : {30, 60}) {
    double total = 0, n = 0;
    for (const auto* e : mine) {
      if (e->delivered_at && within(*e->delivered_at, t, w)) {
        total += static_cast<double>(*e->delivered_at - e->created_at) / 60.0;
        ++n;
      }
    }
    v[f++] = n == 0 ? -1.0 : total / n;
  }
  return v;
}

std::optional<double> brute_force_label(std::span<const sim::OrderEvent> events, geo::DistrictId district,
                                        sim::Timestamp t) {
  double total = 0, n = 0;
  for (const auto& e : events) {
    if (e.district_id != district || e.created_at <= t || e.created_at > t + 300 || !e.delivered_at) continue;
    total += static_cast<double>(*e.delivered_at - e.created_at) / 60.0;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / n;
}

RunConfig small_run_config() {
  RunConfig c;
  c.sim.district_count = 8;
  c.sim.days = 5;
  c.sim.seed = 7;
  c.features.m = 4;
  c.features.n = 3;
  c.features.split = {3, 1, 1};
  c.model.m = 4;
  c.model.n = 3;
  c.model.hidden = 16;
  c.model.heads = 2;
  c.model.embed = 4;
  c.model.mem_hidden = 16;
  c.model.mem_dim = 8;
  c.model.mlp_hidden = 16;
  c.train.batch_size = 64;
  c.train.validation_every = 10;
  return c;
}

SmallWorld build_small_world(const RunConfig& config) {
  SmallWorld w;
  w.districts = sim::generate_districts(config.sim);
  w.simulation = sim::simulate(config.sim, w.districts);
  features::DatasetInputs in;
  in.events = w.simulation.events;
  in.districts = w.districts;
  in.calendar = &w.simulation.calendar;
  in.horizon = {config.sim.start_time - config.sim.start_time % sim::kSecondsPerDay, config.sim.days};
  in.config = config.features;
  in.events_hash = 1;
  w.dataset = features::Dataset::build(in);
  return w;
}

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = std::filesystem::temp_directory_path() /
          ("sttm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

CommandResult run_command(const std::string& command) {
  CommandResult r;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf;
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace sttm::testing
