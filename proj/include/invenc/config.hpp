// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "invenc/data.hpp"
#include "invenc/models.hpp"
#include "invenc/training.hpp"
#include "json.hpp"

namespace invenc::config {

struct Paths {
  std::string data_root;  // empty: generate the synthetic set in memory
  std::string output_dir = "out";
  std::string init_checkpoint;  // optional stage-2 backbone init
};

struct EvaluationConfig {
  std::int64_t knn_k = 10;
  std::uint64_t probe_seed = 0;
  std::string plot_method = "pca";
  std::int64_t tsne_iterations = 1000;
  double tsne_perplexity = 30.0;
};

struct RunConfig {
  std::string run_name = "run";
  Paths paths;
  std::int64_t image_size = 64;  // resize target for on-disk datasets
  data::SyntheticSpec synthetic;
  data::AugmentationConfig augmentation;
  model::EncoderSpec encoder;
  model::ProjectionSpec projection;
  std::int64_t classifier_hidden_dim = 128;
  model::AttachPoint attach_point = model::AttachPoint::projection_output;
  train::TrainConfig stage1 = default_stage1();
  train::TrainConfig stage2;
  EvaluationConfig evaluation;

  static train::TrainConfig default_stage1();
  std::filesystem::path run_dir() const { return std::filesystem::path(paths.output_dir) / run_name; }
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig from_json(const nlohmann::json& j);

// Everything except run_name and paths.output_dir.
nlohmann::json semantic_json(const RunConfig& c);
std::string fingerprint(const RunConfig& c);

// Defaults, then the file (TOML, or JSON for *.json such as a
// resolved_config.json), strictly: unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_toml_string(const std::string& text);

// Sets a dotted key ("stage2.lambda") from a string, typed by the default.
void apply_override(RunConfig& c, const std::string& dotted_key, const std::string& value);

// JSON with both the post-override config and its fingerprint.
nlohmann::json resolved_json(const RunConfig& c);
void write_resolved_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace invenc::config
