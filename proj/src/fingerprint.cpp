// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/fingerprint.hpp"

#include <cstdio>

namespace invenc {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

std::string config_fingerprint(const nlohmann::json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(j))));
  return buf;
}

}  // namespace invenc
