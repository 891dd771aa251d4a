#include <cmath>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "sttm/errors.hpp"
#include "sttm/evaluation.hpp"

namespace {

namespace evaluation = sttm::evaluation;
namespace features = sttm::features;

TEST(Metrics, WorkedExample) {
  const std::vector<double> y{45, 30, 50}, p{40, 30, 55};
  const auto m = evaluation::compute_metrics(p, y);
  EXPECT_DOUBLE_EQ(m.mae, 10.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.mse, 50.0 / 3.0);
  ASSERT_TRUE(m.amae.has_value());
  EXPECT_DOUBLE_EQ(*m.amae, 5.0);
  EXPECT_EQ(m.n_samples, 3u);
  EXPECT_EQ(m.n_anomaly, 2u);
}

TEST(Metrics, AllAnomalousLabelsGiveAmaeEqualToMae) {
  const std::vector<double> y{40, 41, 60}, p{35, 50, 61};
  const auto m = evaluation::compute_metrics(p, y);
  EXPECT_DOUBLE_EQ(*m.amae, m.mae);
}

TEST(Metrics, NoAnomalousLabelsLeaveAmaeAbsent) {
  const std::vector<double> y{10, 39.999}, p{12, 30};
  EXPECT_FALSE(evaluation::compute_metrics(p, y).amae.has_value());
}

TEST(Metrics, RejectsEmptyAndMismatchedInputs) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(evaluation::compute_metrics({}, {}), sttm::ContractError);
  EXPECT_THROW(evaluation::compute_metrics(a, b), sttm::ContractError);
}

TEST(Metrics, TenThousandSamplesMatchLongDoubleOracle) {
  std::mt19937_64 rng(17);
  std::lognormal_distribution<double> label(3.3, 0.35);
  std::normal_distribution<double> noise(0.0, 8.0);
  std::vector<double> y(10000), p(10000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = label(rng);
    p[i] = y[i] + noise(rng);
  }
  long double abs_sum = 0, sq_sum = 0, anomaly_sum = 0;
  std::size_t anomalies = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double d = static_cast<long double>(p[i]) - y[i];
    abs_sum += std::fabs(d);
    sq_sum += d * d;
    if (y[i] >= 40.0) {
      anomaly_sum += std::fabs(d);
      ++anomalies;
    }
  }
  const auto m = evaluation::compute_metrics(p, y);
  ASSERT_GT(anomalies, 100u);
  EXPECT_EQ(m.n_anomaly, anomalies);
  EXPECT_NEAR(m.mae, static_cast<double>(abs_sum / 10000), 1e-12);
  EXPECT_NEAR(m.mse, static_cast<double>(sq_sum / 10000), 1e-10);
  EXPECT_NEAR(*m.amae, static_cast<double>(anomaly_sum / anomalies), 1e-12);
  EXPECT_LE(m.mae * m.mae, m.mse);
}

TEST(Metrics, SquaredMaeNeverExceedsMse) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 80);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> y(1 + trial % 17), p(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = u(rng);
      p[i] = u(rng);
    }
    const auto m = evaluation::compute_metrics(p, y);
    EXPECT_LE(m.mae * m.mae, m.mse * (1 + 1e-12));
  }
}

// Evaluation over a small simulated dataset.

struct SmallSetup {
  sttm::RunConfig config = sttm::testing::small_run_config();
  sttm::testing::SmallWorld world = sttm::testing::build_small_world(config);
};

const SmallSetup& setup() {
  static const SmallSetup s;
  return s;
}

sttm::training::TrainConfig quick_train() {
  auto t = setup().config.train;
  t.max_steps = 3;
  t.batch_size = 32;
  t.validation_every = 0;
  return t;
}

TEST(Baseline, HistoricalMeanMatchesPerDistrictOracle) {
  const auto& ds = setup().world.dataset;
  std::map<sttm::geo::DistrictId, std::pair<double, std::size_t>> sums;
  double total = 0;
  std::size_t count = 0;
  for (auto i : ds.split_indices(features::Split::kTrain)) {
    const auto& r = ds.records()[i];
    sums[r.district_id].first += r.label;
    sums[r.district_id].second += 1;
    total += r.label;
    ++count;
  }
  std::vector<double> p, y;
  for (auto i : ds.split_indices(features::Split::kTest)) {
    const auto& r = ds.records()[i];
    const auto it = sums.find(r.district_id);
    p.push_back(it == sums.end() ? total / count : it->second.first / it->second.second);
    y.push_back(r.label);
  }
  const auto oracle = evaluation::compute_metrics(p, y);
  const auto report = evaluation::historical_mean_baseline(ds, features::Split::kTest);
  EXPECT_NEAR(report.metrics.mae, oracle.mae, 1e-9);
  EXPECT_NEAR(report.metrics.mse, oracle.mse, 1e-9);
  EXPECT_EQ(report.metrics.n_samples, y.size());
}

TEST(Evaluation, FitToDatasetCopiesVocabularyAndRejectsLargerContext) {
  const auto& ds = setup().world.dataset;
  auto c = evaluation::fit_to_dataset(setup().config.model, ds);
  const auto sizes = ds.vocabulary().sizes();
  for (std::size_t s = 0; s < sizes.size(); ++s) EXPECT_EQ(c.vocab[s], sizes[s]);
  c.m = ds.config().m + 1;
  EXPECT_THROW(evaluation::fit_to_dataset(c, ds), sttm::ConfigError);
}

TEST(Evaluation, AblationArmsAreDistinctAndSmaller) {
  const auto& s = setup();
  const auto reports = evaluation::run_ablation(s.world.dataset, s.config.model, quick_train(), 1);
  ASSERT_EQ(reports.size(), 6u);
  std::set<std::uint64_t> fingerprints;
  for (const auto& r : reports) {
    EXPECT_TRUE(r.failure.empty()) << r.variant << ": " << r.failure;
    EXPECT_TRUE(std::isfinite(r.metrics.mae));
    fingerprints.insert(r.config_fingerprint);
    if (r.variant != "sttm") EXPECT_LT(r.parameter_count, reports.front().parameter_count) << r.variant;
  }
  EXPECT_EQ(reports.front().variant, "sttm");
  EXPECT_EQ(fingerprints.size(), 6u);
}

TEST(Evaluation, ParallelArmsMatchSerialArms) {
  const auto& s = setup();
  const auto serial = evaluation::run_ablation(s.world.dataset, s.config.model, quick_train(), 1, 1);
  const auto parallel = evaluation::run_ablation(s.world.dataset, s.config.model, quick_train(), 1, 3);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].metrics.mae, parallel[i].metrics.mae);
    EXPECT_EQ(serial[i].fingerprint(), parallel[i].fingerprint());
  }
}

TEST(Sweep, DefaultGridsAndSingleValue) {
  EXPECT_EQ(evaluation::default_sweep_values(evaluation::SweepParameter::kMemoryPatterns),
            (std::vector<std::size_t>{8, 10, 12, 14, 16, 18}));
  EXPECT_EQ(evaluation::default_sweep_values(evaluation::SweepParameter::kN),
            (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(evaluation::parse_sweep_parameter("l_mem"), evaluation::SweepParameter::kMemoryPatterns);
  EXPECT_THROW(evaluation::parse_sweep_parameter("heads"), sttm::ConfigError);

  const auto& s = setup();
  const auto points =
      evaluation::run_sweep(s.world.dataset, evaluation::SweepParameter::kN, {2}, s.config.model, quick_train(), 1);
  ASSERT_EQ(points.size(), 1u);
  EXPECT_EQ(points[0].value, 2u);
  EXPECT_TRUE(points[0].report.failure.empty());
}

TEST(Sweep, ValuesBeyondDatasetAreRejectedUpFront) {
  const auto& s = setup();
  EXPECT_THROW(evaluation::run_sweep(s.world.dataset, evaluation::SweepParameter::kM, {9}, s.config.model,
                                     quick_train(), 1),
               sttm::ConfigError);
}

TEST(Reports, TableHeaderAndRows) {
  evaluation::MetricsReport r;
  r.variant = "sttm";
  r.metrics = evaluation::compute_metrics(std::vector<double>{1, 2}, std::vector<double>{2, 2});
  const auto table = evaluation::format_table({r});
  EXPECT_EQ(table.substr(0, table.find('\n')), "variant,mae,mse,amae,n_samples,n_anomaly");
  EXPECT_NE(table.find("sttm,0.5"), std::string::npos);
}

}  // namespace
