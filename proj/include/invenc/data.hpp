// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace invenc::data {

// Pixels are C x H x W float32 in [0, 1].
struct ImageRecord {
  torch::Tensor pixels;
  std::int64_t domain_label = 0;
  std::optional<std::int64_t> content_label;
  std::optional<std::string> source_path;
};

// Immutable after construction. images is M x C x H x W.
struct Dataset {
  torch::Tensor images;
  std::vector<std::int64_t> domain_labels;
  std::optional<std::vector<std::int64_t>> content_labels;
  std::vector<std::string> ids;
  std::vector<std::string> domain_names;

  std::int64_t size() const { return static_cast<std::int64_t>(domain_labels.size()); }
  std::int64_t num_domains() const { return static_cast<std::int64_t>(domain_names.size()); }
  std::int64_t image_size() const { return images.size(2); }
  ImageRecord record(std::int64_t i) const;
  void validate() const;
};

struct SyntheticSpec {
  std::int64_t num_domains = 4;
  std::int64_t num_content_classes = 3;
  std::int64_t images_per_domain = 50;
  std::int64_t image_size = 64;
  std::uint64_t seed = 7;
  void validate() const;
};

struct AugmentationConfig {
  double crop_scale_min = 0.6;
  double crop_scale_max = 1.0;
  double jitter_strength = 0.4;
  double hflip_probability = 0.5;
  // Extras, off unless configured.
  double grayscale_probability = 0.0;
  double blur_probability = 0.0;
  std::uint64_t seed_stream = 0;
  // Network input side; views and evaluation crops are resized to it.
  std::int64_t input_size = 64;
  // Side fraction of the deterministic center crop used for embeddings.
  double eval_center_crop = 0.8;
  void validate() const;
};

struct LoadOptions {
  // Square side every image is resized to; 0 keeps the native size (all
  // images must then agree).
  std::int64_t image_size = 64;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);
void to_json(nlohmann::json& j, const AugmentationConfig& a);
void from_json(const nlohmann::json& j, AugmentationConfig& a);

Dataset load_dataset(const std::filesystem::path& root, const LoadOptions& opts = {});

Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

// Writes root/<domain_name>/<id>.png plus manifest.json. The parent of root
// must exist.
void export_dataset(const Dataset& dataset, const std::filesystem::path& root,
                    const nlohmann::json& provenance = nlohmann::json::object());

std::pair<torch::Tensor, torch::Tensor> augment_views(const ImageRecord& record,
                                                      const AugmentationConfig& cfg,
                                                      std::uint64_t index);

// Center crop of cfg.eval_center_crop, resized to cfg.input_size. Accepts a
// single C x H x W image or a batch.
torch::Tensor eval_view(const torch::Tensor& images, const AugmentationConfig& cfg);

struct Batch {
  std::vector<std::int64_t> indices;
  torch::Tensor images;         // B x C x H x W
  torch::Tensor domain_labels;  // B, int64
  std::optional<torch::Tensor> content_labels;
};

std::vector<Batch> make_batches(const Dataset& dataset, std::int64_t batch_size,
                                std::uint64_t seed, bool drop_last);

// Per-class shuffle, round(fraction * n_c) of each class to the first list.
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> stratified_split(
    const std::vector<std::int64_t>& labels, double train_fraction, std::uint64_t seed);

// u8 conversion used by the PNG writer; exposed for round-trip tests.
torch::Tensor quantize_u8(const torch::Tensor& chw);

}  // namespace invenc::data
