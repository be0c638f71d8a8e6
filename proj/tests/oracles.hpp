// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference implementations used only by tests. They loop in plain
// doubles and share no code with the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const torch::Tensor& t) {
  const auto c = t.to(torch::kDouble).contiguous();
  Rows out(static_cast<std::size_t>(c.size(0)), std::vector<double>(static_cast<std::size_t>(c.size(1))));
  for (std::int64_t i = 0; i < c.size(0); ++i)
    for (std::int64_t j = 0; j < c.size(1); ++j) out[i][j] = c[i][j].item<double>();
  return out;
}

inline torch::Tensor random_unit_rows(int n, int d, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  auto t = torch::empty({n, d}, torch::kDouble);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    std::vector<double> v(d);
    for (auto& x : v) {
      x = nd(gen);
      s += x * x;
    }
    s = std::sqrt(s);
    for (int j = 0; j < d; ++j) t[i][j] = v[j] / s;
  }
  return t;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// -log( exp(sim(i,j)/tau) / sum_{k != i} exp(sim(i,k)/tau) )
inline double ntxent_pair(const Rows& z, const std::vector<std::int64_t>& partner, std::size_t i, double tau) {
  double denom = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k)
    if (k != i) denom += std::exp(cosine(z[i], z[k]) / tau);
  const double num = std::exp(cosine(z[i], z[static_cast<std::size_t>(partner[i])]) / tau);
  return -std::log(num / denom);
}

inline double ntxent_batch(const Rows& z, const std::vector<std::int64_t>& partner, double tau) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += ntxent_pair(z, partner, i, tau);
  return s / static_cast<double>(z.size());
}

inline double cross_entropy_row(const std::vector<double>& logits, std::size_t label) {
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l);
  return -std::log(std::exp(logits[label]) / denom);
}

// Exhaustive k-NN purity: every neighbour list is built by scanning all
// points and repeatedly taking the most similar unused one.
inline double knn_purity(const Rows& x, const std::vector<std::int64_t>& labels, std::size_t k) {
  const std::size_t m = x.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<bool> used(m, false);
    used[i] = true;
    std::size_t same = 0;
    for (std::size_t r = 0; r < k; ++r) {
      std::size_t best = m;
      double best_sim = -2.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (used[j]) continue;
        const double s = cosine(x[i], x[j]);
        if (best == m || s > best_sim) {
          best = j;
          best_sim = s;
        }
      }
      used[best] = true;
      same += labels[best] == labels[i];
    }
    total += static_cast<double>(same) / static_cast<double>(k);
  }
  return total / static_cast<double>(m);
}

}  // namespace oracle
