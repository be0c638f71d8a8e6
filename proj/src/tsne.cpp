// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Exact O(M^2) t-SNE (van der Maaten & Hinton) with the usual optimizer
// tricks: early exaggeration, momentum switch and per-coordinate gains.

#include <algorithm>
#include <cmath>
#include <vector>

#include "invenc/error.hpp"
#include "invenc/evaluation.hpp"
#include "invenc/rng.hpp"

namespace invenc::eval {

namespace {

// Row i of the conditional affinities for a target perplexity.
void conditional_row(const std::vector<double>& d2, std::size_t m, std::size_t i, double log_perp,
                     std::vector<double>& p) {
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  const double* row = &d2[i * m];
  for (int it = 0; it < 100; ++it) {
    double sum = 0.0, wsum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) {
        p[i * m + j] = 0.0;
        continue;
      }
      const double v = std::exp(-row[j] * beta);
      p[i * m + j] = v;
      sum += v;
      wsum += v * row[j];
    }
    if (sum <= 0.0) sum = 1e-300;
    const double entropy = std::log(sum) + beta * wsum / sum;
    for (std::size_t j = 0; j < m; ++j) p[i * m + j] /= sum;
    const double diff = entropy - log_perp;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
    } else {
      hi = beta;
      beta = (beta + lo) / 2.0;
    }
  }
}

}  // namespace

torch::Tensor tsne_2d(const torch::Tensor& x_in, std::uint64_t seed, const TsneOptions& opts) {
  const auto x = x_in.to(torch::kDouble).contiguous();
  const auto m = static_cast<std::size_t>(x.size(0));
  if (m < 3) throw InvalidArgument("t-SNE needs at least 3 points");
  const auto d = static_cast<std::size_t>(x.size(1));
  const double* xp = x.data_ptr<double>();

  std::vector<double> d2(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = xp[i * d + k] - xp[j * d + k];
        s += t * t;
      }
      d2[i * m + j] = d2[j * m + i] = s;
    }

  const double perplexity = std::min(opts.perplexity, std::max(1.0, (static_cast<double>(m) - 1.0) / 3.0));
  std::vector<double> p(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) conditional_row(d2, m, i, std::log(perplexity), p);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double s = std::max((p[i * m + j] + p[j * m + i]) / (2.0 * static_cast<double>(m)), 1e-12);
      p[i * m + j] = p[j * m + i] = s;
    }

  CounterRng rng({seed, 0x74736e65});
  std::vector<double> y(m * 2), update(m * 2, 0.0), gains(m * 2, 1.0), grad(m * 2);
  for (auto& v : y) v = 1e-4 * rng.normal();
  std::vector<double> num(m * m);

  for (std::int64_t iter = 0; iter < opts.iterations; ++iter) {
    const double exaggeration = iter < opts.exaggeration_iters ? opts.early_exaggeration : 1.0;
    const double momentum = iter < opts.exaggeration_iters ? 0.5 : 0.8;
    double zsum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      num[i * m + i] = 0.0;
      for (std::size_t j = i + 1; j < m; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * m + j] = num[j * m + i] = q;
        zsum += 2.0 * q;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j == i) continue;
        const double q = num[i * m + j];
        const double coef = (exaggeration * p[i * m + j] - q / zsum) * q;
        gx += coef * (y[2 * i] - y[2 * j]);
        gy += coef * (y[2 * i + 1] - y[2 * j + 1]);
      }
      grad[2 * i] = 4.0 * gx;
      grad[2 * i + 1] = 4.0 * gy;
    }
    for (std::size_t k = 0; k < 2 * m; ++k) {
      const bool same_sign = (grad[k] > 0) == (update[k] > 0);
      gains[k] = std::max(same_sign ? gains[k] * 0.8 : gains[k] + 0.2, 0.01);
      update[k] = momentum * update[k] - opts.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(m);
    my /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }
  return torch::from_blob(y.data(), {static_cast<std::int64_t>(m), 2}, torch::kDouble).clone();
}

}  // namespace invenc::eval
