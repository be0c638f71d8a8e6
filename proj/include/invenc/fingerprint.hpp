// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

namespace invenc {

std::uint64_t fnv1a64(std::string_view bytes);

// Sorted keys, no whitespace; nlohmann objects are ordered maps already.
std::string canonical_json(const nlohmann::json& j);

// 16 lowercase hex digits of FNV-1a over the canonical dump.
std::string config_fingerprint(const nlohmann::json& j);

}  // namespace invenc
