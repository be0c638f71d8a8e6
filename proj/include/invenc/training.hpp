// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "invenc/checkpoint.hpp"
#include "invenc/data.hpp"
#include "invenc/models.hpp"
#include "json.hpp"

namespace invenc::train {

enum class GrlSchedule { constant, ramp };
std::string to_string(GrlSchedule s);
GrlSchedule parse_grl_schedule(const std::string& s);

struct TrainConfig {
  int stage = 2;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 32;
  double learning_rate = 3e-4;
  double weight_decay = 1e-4;
  double lambda = 1.0;
  double tau = 0.5;
  GrlSchedule grl_schedule = GrlSchedule::ramp;
  double grl_coeff_max = 1.0;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 0;  // 0: probe only after the last epoch

  // Adversary refinement (0 and 1 give the plain single joint step).
  std::int64_t classifier_refine_steps = 0;
  double classifier_lr_multiplier = 1.0;
  double grad_clip_norm = 0.0;  // 0 disables clipping
  double holdout_fraction = 0.2;  // stage 1
  std::uint64_t probe_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricsRecord {
  std::int64_t epoch = 0;
  double l_con = 0.0;
  double l_dom = 0.0;
  double l_total = 0.0;
  double domain_train_acc = 0.0;
  std::optional<double> domain_probe_acc;
  double wall_time_s = 0.0;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);

struct StepRecord {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double coeff = 0.0;
  double l_con = 0.0;
  double l_dom = 0.0;
  double l_total = 0.0;
};

void to_json(nlohmann::json& j, const StepRecord& r);

// True when INVENC_DETERMINISTIC=1.
bool deterministic_mode();
// Single intra-op thread and deterministic kernels when requested.
void configure_backend(bool deterministic);

double grl_coefficient(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

// Seeds the global torch generator from (seed, role) before a module is built,
// so each component's init is independent of construction order.
void seed_init(std::uint64_t seed, std::uint64_t role);
inline constexpr std::uint64_t kRoleEncoder = 1, kRoleProjection = 2, kRoleClassifier = 3;

std::shared_ptr<model::Encoder> make_encoder(const model::EncoderSpec& spec, std::uint64_t seed);

struct Stage1Options {
  TrainConfig train;
  model::EncoderSpec encoder;
  std::int64_t classifier_hidden_dim = 128;
  data::AugmentationConfig preprocessing;
  // Recorded in checkpoints; built from the options when null.
  nlohmann::json config;
  std::filesystem::path output_dir;  // empty: nothing written
  std::function<void(const MetricsRecord&)> on_epoch;
};

struct Stage1Report {
  std::vector<MetricsRecord> curve;
  double train_acc = 0.0;
  double holdout_acc = 0.0;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
  CheckpointBundle bundle;
  double wall_time_s = 0.0;
};

Stage1Report train_stage1(const Stage1Options& opts, const data::Dataset& dataset);

struct Stage2Options {
  TrainConfig train;
  model::EncoderSpec encoder;
  model::ProjectionSpec projection;
  std::int64_t classifier_hidden_dim = 128;
  model::AttachPoint attach_point = model::AttachPoint::projection_output;
  data::AugmentationConfig augmentation;
  nlohmann::json config;
  std::filesystem::path output_dir;
  std::optional<CheckpointBundle> init;    // backbone weights only
  std::optional<CheckpointBundle> resume;  // full state, same fingerprint required
  bool record_steps = true;
  std::function<void(const MetricsRecord&)> on_epoch;
};

struct Stage2Report {
  std::vector<MetricsRecord> metrics;
  std::vector<StepRecord> steps;
  CheckpointBundle final;
  double wall_time_s = 0.0;
};

Stage2Report train_stage2(const Stage2Options& opts, const data::Dataset& dataset);

nlohmann::json default_config_json(const Stage1Options& opts);
nlohmann::json default_config_json(const Stage2Options& opts);

}  // namespace invenc::train
