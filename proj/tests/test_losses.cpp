// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "testing.hpp"
#include "invenc/error.hpp"
#include "invenc/losses.hpp"
#include "oracles.hpp"

using namespace invenc;
using namespace invenc::losses;

TEST_CASE("cosine similarity examples") {
  const std::vector<double> e1{1, 0}, e2{0, 1}, diag{1, 1}, zero{0, 0};
  CHECK(cosine_similarity(e1, e1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(e1, e2) == 0.0);
  CHECK(cosine_similarity(diag, e1) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK_THROWS_AS(cosine_similarity(zero, e1), InvalidArgument);
  CHECK_THROWS_WITH(cosine_similarity(e1, zero), "degenerate embedding");
  CHECK_THROWS_AS(cosine_similarity(e1, std::vector<double>{1, 0, 0}), InvalidArgument);
}

TEST_CASE("embedding batch invariants are enforced") {
  auto z = torch::eye(2, torch::kDouble);
  CHECK_NOTHROW(EmbeddingBatch(z, {1, 0}));
  CHECK_THROWS_AS(EmbeddingBatch(z, {0, 1}), InvalidArgument);                    // fixed points
  CHECK_THROWS_AS(EmbeddingBatch(torch::eye(3, torch::kDouble), {1, 2, 0}), InvalidArgument);  // not an involution
  CHECK_THROWS_AS(EmbeddingBatch(2.0 * z, {1, 0}), InvalidArgument);              // not unit rows
  CHECK_THROWS_AS(EmbeddingBatch(torch::ones({1, 2}, torch::kDouble), {0}), InvalidArgument);  // 2N < 2
}

TEST_CASE("ntxent pair loss: trivial and hand-built cases") {
  const ContrastiveConfig unit_tau{1.0};
  SUBCASE("single pair is zero") {
    auto z = torch::tensor({{0.6, 0.8}, {1.0, 0.0}}, torch::kDouble);
    auto b = EmbeddingBatch::from_views(z);
    CHECK(ntxent_pair_loss(0, b, {0.5}).item<double>() == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    CHECK(ntxent_batch_loss(b, {0.5}).item<double>() == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  }
  SUBCASE("identical rows give log(2N-1)") {
    auto z = torch::tensor({{1.0, 0.0}}, torch::kDouble).repeat({4, 1});
    CHECK(ntxent_pair_loss(0, EmbeddingBatch::from_views(z), unit_tau).item<double>() ==
          doctest::Approx(1.0986123).epsilon(1e-7));
    auto z8 = torch::tensor({{0.0, 1.0}}, torch::kDouble).repeat({8, 1});
    CHECK(ntxent_batch_loss(EmbeddingBatch::from_views(z8), {0.5}).item<double>() ==
          doctest::Approx(1.9459101).epsilon(1e-7));
  }
  SUBCASE("two orthogonal pairs against the scalar oracle") {
    auto z = torch::tensor({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}}, torch::kDouble);
    EmbeddingBatch b(z, {1, 0, 3, 2});
    const auto rows = oracle::rows_of(z);
    const double expected = oracle::ntxent_pair(rows, {1, 0, 3, 2}, 0, 1.0);
    // -log(e / (e + 1 + 1))
    CHECK(expected == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0))).epsilon(1e-15));
    CHECK(ntxent_pair_loss(0, b, unit_tau).item<double>() == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ntxent_pair_loss(5, EmbeddingBatch::from_views(torch::eye(2, torch::kDouble)), unit_tau),
                  InvalidArgument);
  CHECK_THROWS_AS(ContrastiveConfig{0.0}.validate(), InvalidArgument);
}

TEST_CASE("ntxent batch loss matches the brute-force oracle on random batches") {
  std::mt19937_64 gen(20260);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(gen() % 16);
    const int d = 2 + static_cast<int>(gen() % 7);
    const double tau = trial % 2 ? 0.5 : 0.1 + 0.9 * static_cast<double>(gen() % 1000) / 1000.0;
    const auto z = oracle::random_unit_rows(2 * n, d, gen);
    std::vector<std::int64_t> partner(2 * n);
    for (int i = 0; i < n; ++i) {
      partner[i] = i + n;
      partner[i + n] = i;
    }
    const double expected = oracle::ntxent_batch(oracle::rows_of(z), partner, tau);
    const double got = ntxent_batch_loss(EmbeddingBatch(z, partner), {tau}).item<double>();
    CHECK(std::abs(got - expected) < 1e-6);
    CHECK(got >= 0.0);
    // Per-anchor terms average to the batch loss.
    double mean = 0.0;
    EmbeddingBatch b(z, partner);
    for (int i = 0; i < 2 * n; ++i) mean += ntxent_pair_loss(i, b, {tau}).item<double>();
    CHECK(mean / (2 * n) == doctest::Approx(got).epsilon(1e-9));
  }
}

TEST_CASE("ntxent batch loss is invariant under simultaneous row permutation") {
  std::mt19937_64 gen(3);
  const int n = 6;
  const auto z = oracle::random_unit_rows(2 * n, 5, gen);
  const auto base = ntxent_batch_loss(EmbeddingBatch::from_views(z), {0.5}).item<double>();
  std::vector<std::int64_t> perm(2 * n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(perm.begin(), perm.end(), gen);
    // Row r of the permuted batch is old row perm[r]; partner is remapped.
    std::vector<std::int64_t> inv(2 * n), partner(2 * n);
    for (int r = 0; r < 2 * n; ++r) inv[perm[r]] = r;
    for (int r = 0; r < 2 * n; ++r) {
      const auto old_partner = perm[r] < n ? perm[r] + n : perm[r] - n;
      partner[r] = inv[old_partner];
    }
    const auto zp = z.index_select(0, torch::tensor(perm, torch::kLong));
    CHECK(std::abs(ntxent_batch_loss(EmbeddingBatch(zp, partner), {0.5}).item<double>() - base) < 1e-9);
  }
}

TEST_CASE("ntxent approaches zero when the positive dominates") {
  // Pairs at 90 degrees from each other, tiny temperature.
  auto z = torch::tensor({{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {0.0, 1.0}}, torch::kDouble);
  EmbeddingBatch b(z, {2, 3, 0, 1});
  const double v = ntxent_batch_loss(b, {0.01}).item<double>();
  CHECK(v >= 0.0);
  CHECK(v < 1e-12);
}

TEST_CASE("domain loss examples and errors") {
  for (std::int64_t g : {2, 4, 10}) {
    const std::vector<std::int64_t> labels{0, g - 1, 1, 0};
    const double got = domain_loss(torch::zeros({4, g}, torch::kDouble), {labels, g}).item<double>();
    CHECK(std::abs(got - std::log(static_cast<double>(g))) < 1e-9);
  }
  CHECK(domain_loss(torch::zeros({1, 10}, torch::kDouble), {{3}, 10}).item<double>() ==
        doctest::Approx(2.3025851).epsilon(1e-7));
  auto saturated = torch::zeros({2, 3}, torch::kDouble);
  saturated[0][1] = 30.0;
  saturated[1][2] = 30.0;
  CHECK(domain_loss(saturated, {{1, 2}, 3}).item<double>() < 1e-9);
  const auto hand = domain_loss(torch::tensor({{1.0, 2.0, 3.0}}, torch::kDouble), {{2}, 3}).item<double>();
  CHECK(hand == doctest::Approx(0.40760596).epsilon(1e-8));
  CHECK(hand == doctest::Approx(oracle::cross_entropy_row({1.0, 2.0, 3.0}, 2)).epsilon(1e-14));
  CHECK_THROWS_AS(domain_loss(torch::zeros({1, 3}), {{3}, 3}), InvalidArgument);
  CHECK_THROWS_AS(domain_loss(torch::zeros({1, 3}), {{-1}, 3}), InvalidArgument);
  CHECK_THROWS_AS(domain_loss(torch::zeros({2, 3}), {{0}, 3}), InvalidArgument);
}

TEST_CASE("GRL forward is the exact identity") {
  auto x = torch::randn({7, 5}, torch::kDouble) * 1e3;
  for (double c : {0.0, 0.5, 1.0, 2.0}) CHECK(torch::equal(grl_apply(x, c), x));
  auto f = torch::randn({3, 3});
  CHECK(torch::equal(grl_apply(f, 1.0), f));
  CHECK_THROWS_AS(grl_apply(x, -1.0), InvalidArgument);
}

TEST_CASE("GRL backward multiplies the upstream gradient by -coeff") {
  auto g = torch::randn({4, 3}, torch::kDouble);
  for (double c : {1.0, 0.5, 0.0}) {
    auto x = torch::randn({4, 3}, torch::kDouble).requires_grad_(true);
    grl_apply(x, c).backward(g);
    CHECK(torch::allclose(x.grad(), -c * g, 0.0, 0.0));
  }
}

TEST_CASE("GRL end-to-end gradient matches -coeff times central finite differences") {
  // f(y) = sum(sin(y) * w) + 0.5 * |y|^2, smooth and nonlinear.
  auto w = torch::randn({6}, torch::kDouble);
  auto f = [&](const torch::Tensor& y) { return (torch::sin(y) * w).sum() + 0.5 * (y * y).sum(); };
  auto x0 = torch::randn({6}, torch::kDouble);
  const double h = 1e-3;
  std::vector<double> fd(6);
  for (int i = 0; i < 6; ++i) {
    auto xp = x0.clone(), xm = x0.clone();
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (f(xp).item<double>() - f(xm).item<double>()) / (2 * h);
  }
  for (double c : {0.0, 0.5, 1.0}) {
    auto x = x0.clone().requires_grad_(true);
    f(grl_apply(x, c)).backward();
    const auto grad = x.grad();
    for (int i = 0; i < 6; ++i) {
      const double expected = -c * fd[i];
      const double got = grad[i].item<double>();
      CHECK(std::abs(got - expected) <= 1e-4 * std::max(1.0, std::abs(expected)));
    }
  }
}

TEST_CASE("total loss composition") {
  CHECK(total_loss(2.0, 3.0, 0.5) == 3.5);
  CHECK(total_loss(1.25, 1e9, 0.0) == 1.25);
  CHECK(total_loss(0.0, 4.5, 1.0) == 4.5);
  // Affine in l_dom with slope exactly lambda.
  for (double lam : {0.0, 0.3, 1.0, 2.5})
    CHECK(total_loss(1.0, 3.0, lam) - total_loss(1.0, 1.0, lam) == doctest::Approx(2.0 * lam).epsilon(1e-15));
  auto a = torch::tensor(2.0, torch::kDouble), b = torch::tensor(3.0, torch::kDouble);
  CHECK(total_loss(a, b, 0.5).item<double>() == 3.5);
}
