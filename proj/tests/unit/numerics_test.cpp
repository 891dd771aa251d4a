#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "sttm/errors.hpp"
#include "sttm/numerics.hpp"

namespace {

using sttm::numerics::Shape;
using sttm::numerics::Tensor;
namespace nx = sttm::numerics;

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(nx::element_count(shape));
  for (double& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Compares backward() of a scalar function against central differences for every input entry.
double max_gradient_error(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs) {
  for (auto& t : inputs) t.clear_grad();
  nx::backward(f(inputs));
  double worst = 0.0;
  const double h = 1e-5;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      t.mutable_data()[i] = saved + h;
      const double up = f(inputs).item();
      t.mutable_data()[i] = saved - h;
      const double down = f(inputs).item();
      t.mutable_data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({1e-6, std::abs(numeric), std::abs(analytic[i])}));
    }
  }
  return worst;
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor weighted(const Tensor& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
  return nx::sum(nx::mul(y, Tensor::from(y.shape(), w)));
}

TEST(Numerics, MatmulMatchesLoops) {
  const Tensor a = random_tensor({2, 3, 4}, 1, false);
  const Tensor b = random_tensor({4, 5}, 2, false);
  const Tensor c = nx::matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(r * 4 + k) * b.at(k * 5 + j);
      EXPECT_NEAR(c.at(r * 5 + j), s, 1e-12);
    }
  }
}

TEST(Numerics, GradientsOfElementwiseOps) {
  auto a = random_tensor({3, 4}, 3);
  auto b = random_tensor({3, 4}, 4);
  auto bias = random_tensor({4}, 5);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::add(in[0], in[1])); }, {a, b}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::add(in[0], in[1])); }, {a, bias}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::sub(in[0], in[1])); }, {a, b}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::mul(in[0], in[1])); }, {a, b}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::scale(in[0], -2.5)); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::relu(in[0])); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::abs(in[0])); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return nx::mean(in[0]); }, {a}), 1e-7);
}

TEST(Numerics, GradientsOfStructuredOps) {
  auto a = random_tensor({2, 3, 4}, 6);
  auto w = random_tensor({4, 5}, 7);
  auto g = random_tensor({4}, 8);
  auto beta = random_tensor({4}, 9);
  auto k = random_tensor({2, 5, 4}, 10);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::matmul(in[0], in[1])); }, {a, w}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::batched_matmul(in[0], in[1], true)); },
                               {a, k}),
            1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::softmax(in[0], 1)); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::softmax(in[0], 2)); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::layer_norm(in[0], in[1], in[2])); },
                               {a, g, beta}),
            1e-6);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::mean_axis(in[0], 1)); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::permute(in[0], {2, 0, 1})); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::take(in[0], 1, 2)); }, {a}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::concat({in[0], in[0], in[1]})); },
                               {a, random_tensor({2, 3, 2}, 11)}),
            1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::transpose(in[0])); }, {w}), 1e-7);
  EXPECT_LT(max_gradient_error([](const auto& in) { return weighted(nx::reshape(in[0], {6, 4})); }, {a}), 1e-7);
}

TEST(Numerics, EmbeddingLookupSelectsRowsAndScattersGradients) {
  auto table = random_tensor({5, 3}, 12);
  const std::vector<std::int64_t> ids{4, 0, 4, 2};
  const Tensor rows = nx::embedding_lookup(table, ids, "ids");
  for (std::size_t r = 0; r < ids.size(); ++r) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(rows.at(r * 3 + j), table.at(ids[r] * 3 + j));
  }
  // Row selection equals a one-hot matrix product.
  std::vector<double> one_hot(ids.size() * 5, 0.0);
  for (std::size_t r = 0; r < ids.size(); ++r) one_hot[r * 5 + ids[r]] = 1.0;
  const Tensor product = nx::matmul(Tensor::from({ids.size(), 5}, one_hot), table);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows.at(i), product.at(i));

  EXPECT_LT(max_gradient_error([&](const auto& in) { return weighted(nx::embedding_lookup(in[0], ids, "ids")); },
                               {table}),
            1e-7);
  const std::vector<std::int64_t> bad{5};
  EXPECT_THROW(nx::embedding_lookup(table, bad, "ids"), sttm::IndexError);
  const std::vector<std::int64_t> negative{-1};
  EXPECT_THROW(nx::embedding_lookup(table, negative, "ids"), sttm::IndexError);
}

TEST(Numerics, SoftmaxRowsAreDistributions) {
  const Tensor s = nx::softmax(random_tensor({4, 7}, 13, false), 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(s.at(r * 7 + j), 0.0);
      total += s.at(r * 7 + j);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  const Tensor big = nx::softmax(Tensor::from({1, 2}, {1000.0, 1000.0}), 1);
  EXPECT_DOUBLE_EQ(big.at(0), 0.5);
}

TEST(Numerics, LayerNormStandardizesRows) {
  const Tensor y = nx::layer_norm(random_tensor({3, 16}, 14, false), Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mean += y.at(r * 16 + j) / 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(r * 16 + j) - mean) * (y.at(r * 16 + j) - mean) / 16;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Numerics, DropoutIsIdentityOutsideTrainingAndUnbiasedInside) {
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::full({20000}, 2.0);
  EXPECT_TRUE(nx::dropout(x, 0.3, false, rng).same_node(x));
  EXPECT_TRUE(nx::dropout(x, 0.0, true, rng).same_node(x));
  const Tensor y = nx::dropout(x, 0.3, true, rng);
  double total = 0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    total += v;
    zeros += v == 0.0;
    if (v != 0.0) EXPECT_NEAR(v, 2.0 / 0.7, 1e-12);
  }
  EXPECT_NEAR(total / 20000, 2.0, 0.05);
  EXPECT_NEAR(static_cast<double>(zeros) / 20000, 0.3, 0.02);
}

TEST(Numerics, GradientsAccumulateUntilCleared) {
  auto a = Tensor::from({2}, {1.0, -2.0}, true);
  nx::backward(nx::sum(nx::scale(a, 3.0)));
  nx::backward(nx::sum(nx::scale(a, 3.0)));
  EXPECT_EQ(a.grad()[0], 6.0);
  a.clear_grad();
  EXPECT_FALSE(a.has_grad());
}

TEST(Numerics, SharedSubexpressionGradientCountsEveryPath) {
  auto a = Tensor::from({1}, {1.5}, true);
  const Tensor b = nx::mul(a, a);
  nx::backward(nx::sum(nx::add(b, b)));
  EXPECT_DOUBLE_EQ(a.grad()[0], 4 * 1.5);
}

TEST(Numerics, NoGradGuardSkipsGraph) {
  auto a = Tensor::from({1}, {2.0}, true);
  Tensor y;
  {
    nx::NoGradGuard guard;
    EXPECT_FALSE(nx::grad_enabled());
    y = nx::scale(a, 2.0);
  }
  EXPECT_TRUE(nx::grad_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Numerics, ShapeMismatchesThrow) {
  EXPECT_THROW(nx::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), sttm::DimensionError);
  EXPECT_THROW(nx::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), sttm::DimensionError);
  EXPECT_THROW(nx::reshape(Tensor::zeros({2, 3}), {5}), sttm::DimensionError);
  EXPECT_THROW(nx::backward(Tensor::zeros({2}, true)), sttm::ContractError);
}

}  // namespace
