#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "sttm/errors.hpp"
#include "sttm/model.hpp"

namespace {

namespace model = sttm::model;
namespace nx = sttm::numerics;
using model::Tensor;
using sttm::testing::random_batch;
using sttm::testing::tiny_model_config;

Tensor random_tensor(nx::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> data(nx::element_count(shape));
  for (double& v : data) v = normal(rng);
  return Tensor::from(std::move(shape), std::move(data));
}

Tensor one_hot(std::size_t size, std::size_t index) {
  std::vector<double> data(size, 0.0);
  data[index] = 1.0;
  return Tensor::from({1, size}, std::move(data));
}

void expect_same(std::span<const double> a, std::span<const double> b, double tol = 0.0) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (tol == 0.0) {
      ASSERT_EQ(a[i], b[i]) << i;
    } else {
      ASSERT_NEAR(a[i], b[i], tol) << i;
    }
  }
}

TEST(ModelConfig, DefaultParameterCountIsGolden) {
  const model::SttmConfig c;
  EXPECT_EQ(model::parameter_count(c), 1755873u);
  EXPECT_EQ(model::SttmModel(c, 1).parameter_count(), 1755873u);
}

TEST(ModelConfig, ClosedFormMatchesInstanceForEveryVariant) {
  auto c = tiny_model_config();
  const std::size_t full = model::parameter_count(c);
  for (auto v : model::kAllVariants) {
    c.variant = v;
    const model::SttmModel m(c, 3);
    std::size_t counted = 0;
    for (const auto& [name, t] : m.named_parameters()) counted += t.size();
    EXPECT_EQ(counted, model::parameter_count(c)) << model::to_string(v);
    if (v != model::Variant::kFull) EXPECT_LT(counted, full) << model::to_string(v);
  }
}

TEST(ModelConfig, VariantNamesRoundTrip) {
  for (auto v : model::kAllVariants) EXPECT_EQ(model::parse_variant(model::to_string(v)), v);
  EXPECT_THROW(model::parse_variant("no_everything"), sttm::ConfigError);
}

TEST(ModelConfig, ValidateNamesOffendingField) {
  auto c = tiny_model_config();
  c.heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const sttm::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos);
  }
  c = tiny_model_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), sttm::ConfigError);
}

TEST(Gradients, FullModelMatchesCentralDifferences) {
  model::SttmModel m(tiny_model_config(), 5);
  m.set_label_affine(30.0, 7.0);
  const auto check = sttm::testing::check_gradients(m, random_batch(m.config(), 4, 9));
  EXPECT_GT(check.checked, 0u);
  EXPECT_LT(check.max_relative_error, 1e-4) << check.worst_parameter << ' ' << check.worst_numeric << " vs " << check.worst_analytic;
}

TEST(Gradients, EveryVariantMatchesCentralDifferences) {
  auto c = tiny_model_config();
  for (auto v : model::kAllVariants) {
    c.variant = v;
    model::SttmModel m(c, 6);
    const auto check = sttm::testing::check_gradients(m, random_batch(c, 3, 10), 1e-5, 6);
    EXPECT_LT(check.max_relative_error, 1e-4) << model::to_string(v) << ' ' << check.worst_parameter << ' ' << check.worst_numeric << " vs " << check.worst_analytic;
  }
}

TEST(PositionEmbedding, TemporalRowEqualsOneHotProduct) {
  const model::SttmModel m(tiny_model_config(), 1);
  const auto& w = m.params().w_tpe;
  for (std::size_t j = 0; j < m.config().n; ++j) {
    const auto row = m.temporal_position_embedding(j);
    const auto via_one_hot = nx::matmul(one_hot(m.config().n, j), w);
    expect_same(row.data(), via_one_hot.data());
    expect_same(row.data(), w.data().subspan(j * m.config().hidden, m.config().hidden));
  }
}

TEST(PositionEmbedding, SpatialIsSumOfAxisRows) {
  const model::SttmModel m(tiny_model_config(), 1);
  const auto& c = m.config();
  const std::size_t h = c.hidden;
  const auto& wx = m.params().w_spe_x;
  const auto& wy = m.params().w_spe_y;
  for (std::int64_t x = 0; x < 2 * c.nx; ++x) {
    for (std::int64_t y = 0; y < 2 * c.ny; ++y) {
      const auto e = m.spatial_position_embedding(x, y);
      const auto oracle = nx::add(nx::matmul(one_hot(2 * c.nx, x), wx), nx::matmul(one_hot(2 * c.ny, y), wy));
      expect_same(e.data(), oracle.data());
    }
  }
  const auto center = m.spatial_position_embedding(c.nx, c.ny);
  for (std::size_t k = 0; k < h; ++k) {
    EXPECT_EQ(center.data()[k], wx.data()[c.nx * h + k] + wy.data()[c.ny * h + k]);
  }
  EXPECT_THROW(m.spatial_position_embedding(2 * c.nx, 0), sttm::IndexError);
}

TEST(SpatialEncoder, NeighborPermutationLeavesOutputUnchanged) {
  auto c = tiny_model_config();
  c.m = 5;
  model::SttmModel m(c, 8);
  const auto batch = random_batch(c, 6, 4);
  const auto base = m.predict(batch);
  const std::size_t block = c.n * c.d_a;
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> order(c.m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin() + 1, order.end(), rng);
    auto permuted = batch;
    for (std::size_t b = 0; b < batch.size; ++b) {
      for (std::size_t k = 0; k < c.m; ++k) {
        const std::size_t from = b * c.m + order[k], to = b * c.m + k;
        std::copy_n(batch.x_a.begin() + from * block, block, permuted.x_a.begin() + to * block);
        permuted.rel_x[to] = batch.rel_x[from];
        permuted.rel_y[to] = batch.rel_y[from];
      }
    }
    expect_same(m.predict(permuted), base, 1e-9);
  }
}

TEST(SpatialEncoder, SingleDistrictContext) {
  auto c = tiny_model_config();
  c.m = 1;
  model::SttmModel m(c, 2);
  const auto y = m.forward(random_batch(c, 3, 1), false);
  ASSERT_EQ(y.shape(), (nx::Shape{3}));
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Sensitive, EmbeddingMatchesConcatThenProject) {
  const model::SttmModel m(tiny_model_config(), 3);
  const auto& c = m.config();
  const auto batch = random_batch(c, 4, 2);
  const auto out = m.embed_sensitive(batch.sensitive);
  ASSERT_EQ(out.shape(), (nx::Shape{4, c.mem_hidden}));
  const auto& p = m.params();
  for (std::size_t b = 0; b < 4; ++b) {
    std::vector<double> concat;
    for (std::size_t s = 0; s < c.d_b; ++s) {
      const auto id = static_cast<std::size_t>(batch.sensitive[b * c.d_b + s]);
      const auto row = p.sensitive[s].data().subspan(id * c.embed, c.embed);
      concat.insert(concat.end(), row.begin(), row.end());
    }
    for (std::size_t j = 0; j < c.mem_hidden; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < concat.size(); ++i) acc += concat[i] * p.w_xb.data()[i * c.mem_hidden + j];
      EXPECT_NEAR(out.data()[b * c.mem_hidden + j], acc, 1e-12);
    }
  }
}

TEST(Sensitive, WeatherChangesForecast) {
  model::SttmModel m(tiny_model_config(), 3);
  auto batch = random_batch(m.config(), 1, 2);
  batch.sensitive[sttm::features::kWeatherSlot] = 0;
  const double normal = m.predict(batch).front();
  batch.sensitive[sttm::features::kWeatherSlot] = 3;
  EXPECT_NE(m.predict(batch).front(), normal);
}

TEST(Memory, ZeroQueryReadsColumnMean) {
  model::SttmModel m(tiny_model_config(), 4);
  const auto& c = m.config();
  std::fill(m.params().w_q.mutable_data().begin(), m.params().w_q.mutable_data().end(), 0.0);
  std::fill(m.params().b_q.mutable_data().begin(), m.params().b_q.mutable_data().end(), 0.0);
  const auto read = m.memory_forward(random_tensor({2, c.hidden}, 1), random_tensor({2, c.mem_hidden}, 2));
  const auto w = m.params().w_mem.data();
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < c.mem_patterns; ++i) {
      EXPECT_DOUBLE_EQ(read.weights.data()[b * c.mem_patterns + i], 1.0 / static_cast<double>(c.mem_patterns));
    }
    for (std::size_t d = 0; d < c.mem_dim; ++d) {
      double mean = 0.0;
      for (std::size_t i = 0; i < c.mem_patterns; ++i) mean += w[i * c.mem_dim + d];
      mean /= static_cast<double>(c.mem_patterns);
      EXPECT_NEAR(read.alpha.data()[b * c.mem_dim + d], mean, 1e-12);
    }
  }
}

TEST(Memory, WeightsFormADistribution) {
  const model::SttmModel m(tiny_model_config(), 4);
  const auto& c = m.config();
  const auto read = m.memory_forward(random_tensor({16, c.hidden}, 5), random_tensor({16, c.mem_hidden}, 6));
  for (std::size_t b = 0; b < 16; ++b) {
    double total = 0.0;
    for (std::size_t i = 0; i < c.mem_patterns; ++i) {
      const double v = read.weights.data()[b * c.mem_patterns + i];
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Memory, DominantLogitSelectsItsPattern) {
  model::SttmModel m(tiny_model_config(), 4);
  const auto& c = m.config();
  auto& p = m.params();
  std::fill(p.w_q.mutable_data().begin(), p.w_q.mutable_data().end(), 0.0);
  auto bq = p.b_q.mutable_data();
  std::fill(bq.begin(), bq.end(), 0.0);
  bq[0] = 1.0;
  auto mem = p.w_mem.mutable_data();
  for (std::size_t i = 0; i < c.mem_patterns; ++i) mem[i * c.mem_dim] = 0.0;
  const std::size_t chosen = 2;
  mem[chosen * c.mem_dim] = 50.0;
  const auto read = m.memory_forward(random_tensor({1, c.hidden}, 1), random_tensor({1, c.mem_hidden}, 2));
  for (std::size_t d = 0; d < c.mem_dim; ++d) {
    EXPECT_NEAR(read.alpha.data()[d], mem[chosen * c.mem_dim + d], 1e-9);
  }
}

TEST(Inference, DeterministicAndDropoutFree) {
  auto c = tiny_model_config();
  c.dropout = 0.5;
  model::SttmModel m(c, 7);
  const auto batch = random_batch(c, 8, 3);
  EXPECT_EQ(m.predict(batch), m.predict(batch));
}

TEST(Inference, AllMissingRowsGiveFiniteForecast) {
  model::SttmModel m(tiny_model_config(), 7);
  auto batch = random_batch(m.config(), 2, 3);
  std::fill(batch.x_a.begin(), batch.x_a.end(), -1.0);
  for (double v : m.predict(batch)) EXPECT_TRUE(std::isfinite(v));
}

TEST(Inference, ShapeMismatchIsRejected) {
  model::SttmModel m(tiny_model_config(), 7);
  auto batch = random_batch(m.config(), 2, 3);
  batch.m += 1;
  EXPECT_THROW(m.predict(batch), sttm::DimensionError);
}

TEST(Seeds, SameSeedSameModelOtherSeedDiffers) {
  const auto c = tiny_model_config();
  const model::SttmModel a(c, 11), b(c, 11), other(c, 12);
  EXPECT_EQ(model::parameter_fingerprint(a), model::parameter_fingerprint(b));
  EXPECT_NE(model::parameter_fingerprint(a), model::parameter_fingerprint(other));
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  sttm::testing::TempDir dir("checkpoint");
  model::SttmModel m(tiny_model_config(), 13);
  m.set_label_affine(28.5, 6.25);
  const auto path = (dir / "m.ckpt").string();
  model::save_checkpoint(path, m, 0xabcdef, 13);
  model::CheckpointInfo info;
  auto back = model::load_checkpoint(path, 0xabcdef, &info);
  EXPECT_EQ(info.seed, 13u);
  EXPECT_EQ(info.config, m.config());
  EXPECT_EQ(model::parameter_fingerprint(back), model::parameter_fingerprint(m));
  const auto batch = random_batch(m.config(), 5, 1);
  EXPECT_EQ(back.predict(batch), m.predict(batch));
  EXPECT_THROW(model::load_checkpoint(path, 0x1234), sttm::CompatibilityError);
}

}  // namespace
