#include <random>

#include <benchmark/benchmark.h>

#include "sttm/features.hpp"
#include "sttm/model.hpp"
#include "sttm/simulator.hpp"
#include "sttm/training.hpp"

namespace {

namespace features = sttm::features;
namespace model = sttm::model;
namespace nx = sttm::numerics;
namespace sim = sttm::sim;

nx::Tensor random_tensor(nx::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> data(nx::element_count(shape));
  for (double& v : data) v = normal(rng);
  return nx::Tensor::from(std::move(shape), std::move(data));
}

features::SampleBatch random_batch(const model::SttmConfig& c, std::size_t size) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  features::SampleBatch b;
  b.size = size;
  b.m = c.m;
  b.n = c.n;
  b.x_a.resize(size * c.m * c.n * c.d_a);
  for (double& v : b.x_a) v = normal(rng);
  for (std::size_t i = 0; i < size * c.m; ++i) {
    b.rel_x.push_back(1 + static_cast<std::int64_t>(rng() % (2 * c.nx - 1)));
    b.rel_y.push_back(1 + static_cast<std::int64_t>(rng() % (2 * c.ny - 1)));
  }
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t s = 0; s < c.d_b; ++s) b.sensitive.push_back(static_cast<std::int64_t>(rng() % c.vocab[s]));
    b.labels.push_back(30.0 + 5.0 * normal(rng));
  }
  return b;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, 256}, 1), b = random_tensor({256, 256}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nx::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(640);

void BM_ForwardInference(benchmark::State& state) {
  const model::SttmConfig config;
  model::SttmModel m(config, 1);
  const auto batch = random_batch(config, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardInference)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainingStep(benchmark::State& state) {
  const model::SttmConfig config;
  model::SttmModel m(config, 1);
  const auto batch = random_batch(config, static_cast<std::size_t>(state.range(0)));
  const auto labels = nx::Tensor::from({batch.size}, batch.labels);
  for (auto _ : state) {
    for (auto& p : m.parameters()) p.clear_grad();
    nx::backward(sttm::training::mae_loss(m.forward(batch, true), labels));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainingStep)->Arg(64)->Unit(benchmark::kMillisecond);

struct SimulatedDay {
  SimulatedDay() {
    config.district_count = 10;
    config.days = 1;
    districts = sim::generate_districts(config);
    events = sim::simulate(config, districts).events;
  }
  sim::SimConfig config;
  std::vector<sttm::geo::DistrictGeo> districts;
  std::vector<sim::OrderEvent> events;
};

const SimulatedDay& simulated_day() {
  static const SimulatedDay day;
  return day;
}

void BM_EventIndexBuild(benchmark::State& state) {
  const auto& day = simulated_day();
  for (auto _ : state) benchmark::DoNotOptimize(features::EventIndex(day.events));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(day.events.size()));
}
BENCHMARK(BM_EventIndexBuild)->Unit(benchmark::kMillisecond);

void BM_AggregateSlice(benchmark::State& state) {
  const auto& day = simulated_day();
  const features::EventIndex index(day.events);
  const sim::Timestamp noon = day.config.start_time + 12 * 3600;
  std::size_t k = 0;
  for (auto _ : state) {
    const auto& d = day.districts[k++ % day.districts.size()];
    benchmark::DoNotOptimize(features::aggregate_slice(index, d.district_id, noon));
  }
}
BENCHMARK(BM_AggregateSlice);

}  // namespace

BENCHMARK_MAIN();
