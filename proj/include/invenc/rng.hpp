// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace invenc {

std::uint64_t splitmix64(std::uint64_t x);

// Folds a list of words into one 64-bit key; order matters.
std::uint64_t mix_keys(std::initializer_list<std::uint64_t> words);

// Counter-based generator: the n-th draw is a pure function of (key, n), so a
// stream for (seed, index, view) never depends on who else drew before it.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::initializer_list<std::uint64_t> words) : key_(mix_keys(words)) {}

  std::uint64_t next_u64();
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);      // [lo, hi)
  std::uint64_t below(std::uint64_t n);      // [0, n), n > 0
  bool bernoulli(double p) { return uniform() < p; }
  double normal();                           // standard normal (Box-Muller)

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Fisher-Yates permutation of 0..n-1.
std::vector<std::int64_t> permutation(std::int64_t n, std::uint64_t key);

}  // namespace invenc
