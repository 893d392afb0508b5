// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hyperadapt/errors.hpp"
#include "hyperadapt/gradcheck.hpp"
#include "hyperadapt/harness.hpp"
#include "hyperadapt/ops.hpp"
#include "oracles.hpp"

using namespace hyperadapt;

TEST_CASE("tensor construction checks element count") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
  SUBCASE("identity leaves a matrix unchanged") {
    std::mt19937_64 rng(3);
    const Tensor m = Tensor::randn({2, 2}, 1.0, rng);
    const Tensor out = matmul(Tensor::eye(2), m);
    CHECK(oracle::bitwise_equal(out.values(), m.values()));
  }
  SUBCASE("hand example") {
    const Tensor out = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {0, 1}));
    CHECK(out.shape() == Shape{2, 1});
    CHECK(out.at(0, 0) == 2.0);
    CHECK(out.at(1, 0) == 4.0);
  }
  SUBCASE("inner dimensions must agree") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  }
  SUBCASE("matches the naive triple loop") {
    std::mt19937_64 rng(11);
    const Tensor a = Tensor::randn({5, 7}, 1.0, rng);
    const Tensor b = Tensor::randn({7, 4}, 1.0, rng);
    const auto ref = oracle::matmul(oracle::to_mat(a), oracle::to_mat(b));
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(c.at(i, j) == doctest::Approx(ref[i][j]).epsilon(1e-13));
  }
  SUBCASE("gradient of sum(A B) with respect to A") {
    std::mt19937_64 rng(5);
    Tensor a = Tensor::randn({3, 4}, 1.0, rng, true);
    const Tensor b = Tensor::randn({4, 2}, 1.0, rng);
    const double err = gradcheck([&] { return sum(matmul(a, b)); }, {a});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("elementwise ops") {
  const Tensor x = Tensor::from({2}, {-1.0, 2.5});
  const Tensor r = relu(x);
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 2.5);

  const Tensor y = add(x, Tensor::zeros({2}));
  CHECK(oracle::bitwise_equal(y.values(), x.values()));
  CHECK(add(x, Tensor::scalar(1.0)).at(0) == 0.0);
  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), DimensionError);

  Tensor z = Tensor::scalar(0.0, true);
  backward(sum(tanh(z)));
  CHECK(z.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax") {
  const Tensor even = softmax(Tensor::from({2}, {0.0, 0.0}), 0);
  CHECK(even.at(0) == 0.5);
  CHECK(even.at(1) == 0.5);

  for (double v : {-700.0, 0.0, 3.5, 1e6}) CHECK(softmax(Tensor::from({1}, {v}), 0).at(0) == 1.0);

  const Tensor big = softmax(Tensor::from({2}, {1000.0, 1000.1}), 0);
  // Shifted-exponent oracle: subtract the maximum before exponentiating.
  const double e0 = std::exp(1000.0 - 1000.1), e1 = 1.0;
  CHECK(std::isfinite(big.at(0)));
  CHECK(big.at(0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-14));
  CHECK(big.at(1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-14));
  CHECK(std::abs(big.at(0) + big.at(1) - 1.0) < 1e-15);

  CHECK_THROWS_AS(softmax(Tensor::from({2}, {0.0, std::nan("")}), 0), NumericError);
}

TEST_CASE("softmax rows sum to one and are permutation-equivariant") {
  std::mt19937_64 rng(21);
  const Tensor x = Tensor::randn({4, 6}, 3.0, rng);
  const Tensor s = softmax(x, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 6; ++j) total += s.at(i, j);
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> permuted(24);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) permuted[i * 6 + j] = x.at(i, perm[j]);
  const Tensor sp = softmax(Tensor::from({4, 6}, permuted), 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(sp.at(i, j) == doctest::Approx(s.at(i, perm[j])).epsilon(1e-15));
}

TEST_CASE("frobenius_sq") {
  CHECK(frobenius_sq(Tensor::zeros({3, 3})).item() == 0.0);
  CHECK(frobenius_sq(Tensor::eye(2)).item() == 2.0);
  CHECK(frobenius_sq(Tensor::from({1, 2}, {3, 4})).item() == 25.0);
}

TEST_CASE("backward") {
  SUBCASE("sum gives all ones and accumulates across calls") {
    Tensor x = Tensor::zeros({2, 3, 2}, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 2.0);
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
  }
  SUBCASE("frobenius_sq gives 2x") {
    std::mt19937_64 rng(8);
    Tensor x = Tensor::randn({3, 4}, 1.0, rng, true);
    backward(frobenius_sq(x));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0 * x.values()[i]);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor x = Tensor::zeros({2}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
  }
  SUBCASE("intermediates with requires_grad get a gradient") {
    Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
    Tensor mid = scale(x, 3.0);
    backward(sum(mul(mid, mid)));
    CHECK(mid.has_grad());
    CHECK(mid.grad()[0] == 6.0);
    CHECK(x.grad()[1] == -36.0);
  }
  SUBCASE("shared subexpressions are visited once") {
    Tensor x = Tensor::scalar(2.0, true);
    const Tensor y = mul(x, x);
    backward(add(y, y));
    CHECK(x.grad()[0] == 8.0);
  }
  SUBCASE("forward values survive graph construction and backward") {
    std::mt19937_64 rng(2);
    Tensor a = Tensor::randn({3, 3}, 1.0, rng, true);
    const std::vector<double> before = a.to_vector();
    const Tensor out = softmax(matmul(a, transpose(a)), 1);
    const std::vector<double> out_before = out.to_vector();
    backward(frobenius_sq(out));
    CHECK(a.to_vector() == before);
    CHECK(out.to_vector() == out_before);
  }
}

TEST_CASE("random five-op composite matches finite differences") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = Tensor::randn({3, 4}, 1.0, rng, true);
    Tensor b = Tensor::randn({4, 2}, 1.0, rng, true);
    const double err = gradcheck([&] { return mean(exp(tanh(scale(matmul(a, b), 0.5)))); }, {a, b});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("every op case of the standard suite stays below 1e-5 over 20 seeds") {
  std::vector<GradCheckCase> ops;
  for (auto& c : standard_gradcheck_cases())
    if (c.name.rfind("pipeline", 0) != 0 && c.name.rfind("backbone", 0) != 0) ops.push_back(c);
  REQUIRE(ops.size() >= 20);
  for (const auto& row : run_gradcheck_suite(ops, 20, 1e-5)) {
    INFO(row.name << " " << row.max_rel_error);
    CHECK(row.passed);
  }
}

TEST_CASE("a corrupted backward rule is flagged") {
  // Same forward as relu, but the backward rule passes gradient everywhere.
  const auto broken_relu = [](const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.values()[i]);
    return make_op(x.shape(), std::move(out), "bad_relu", {x},
                   [](std::span<const double> g, std::span<const std::span<double>> pg) {
                     for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
                   });
  };
  std::vector<GradCheckCase> cases{
      {"relu", [](unsigned seed) {
         std::mt19937_64 rng(seed);
         Tensor x = Tensor::randn({4, 4}, 1.0, rng, true);
         return gradcheck([&] { return sum(relu(x)); }, {x});
       }},
      {"bad_relu", [&](unsigned seed) {
         std::mt19937_64 rng(seed);
         Tensor x = Tensor::randn({4, 4}, 1.0, rng, true);
         return gradcheck([&] { return sum(broken_relu(x)); }, {x});
       }},
  };
  const auto rows = run_gradcheck_suite(cases, 3, 1e-4);
  CHECK(rows[0].passed);
  CHECK_FALSE(rows[1].passed);
}

TEST_CASE("relative error falls back to absolute difference near zero") {
  const std::vector<double> zero{0.0, 0.0}, tiny{1e-12, 0.0};
  CHECK(relative_error(zero, zero) == 0.0);
  CHECK(relative_error(zero, tiny) == doctest::Approx(1e-12));
  const std::vector<double> a{1.0, 0.0}, b{1.0, 1e-3};
  CHECK(relative_error(a, b) == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("mask_select zeroes masked entries exactly and blocks their gradient") {
  Tensor x = Tensor::from({3}, {-0.0, 2.0, 3.0}, true);
  const Tensor y = mask_select(x, {true, false, true});
  CHECK(y.at(1) == 0.0);
  CHECK_FALSE(std::signbit(y.at(1)));
  backward(sum(y));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}
