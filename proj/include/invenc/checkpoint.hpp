// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "invenc/data.hpp"
#include "invenc/models.hpp"
#include "json.hpp"

namespace invenc {

struct CheckpointBundle {
  int stage = 2;
  model::EncoderSpec encoder_spec;
  std::optional<model::ProjectionSpec> projection_spec;
  model::DomainClassifierSpec classifier_spec;
  model::AttachPoint attach_point = model::AttachPoint::projection_output;
  data::AugmentationConfig augmentation;  // input size and eval crop travel with the weights

  std::shared_ptr<model::Encoder> encoder;
  model::ProjectionHead projection{nullptr};
  model::DomainClassifier classifier{nullptr};

  nlohmann::json config = nlohmann::json::object();
  std::string fingerprint;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;

  // Serialized optimizer archives (opaque bytes); empty when not resumable.
  std::string optimizer_main;
  std::string optimizer_classifier;

  std::uint64_t encoder_checksum() const;
  std::optional<std::uint64_t> projection_checksum() const;
  std::uint64_t classifier_checksum() const;
};

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

// Writes <path> (pickled tensor dict) and <path>.json atomically.
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);

// Rebuilds modules from the sidecar specs, restores tensors bit-identically
// and verifies both the config fingerprint and the tensor checksums.
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace invenc
