// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include <torch/script.h>
#include <torch/torch.h>

namespace invenc::model {

inline constexpr std::int64_t kMinImageSide = 32;

enum class EncoderKind { small_cnn, pretrained_convnext };
enum class AttachPoint { projection_output, backbone_features };

std::string to_string(EncoderKind k);
std::string to_string(AttachPoint a);
EncoderKind parse_encoder_kind(const std::string& s);
AttachPoint parse_attach_point(const std::string& s);

struct EncoderSpec {
  EncoderKind kind = EncoderKind::small_cnn;
  std::int64_t feature_dim = 128;
  bool frozen = false;
  // TorchScript module for pretrained_convnext; must map B x 3 x H x W to
  // B x feature_dim.
  std::string weights_path;
  std::int64_t in_channels = 3;
  void validate() const;
};

struct ProjectionSpec {
  std::int64_t hidden_dim = 256;
  std::int64_t output_dim = 64;
  bool normalize = true;
  void validate() const;
};

struct DomainClassifierSpec {
  std::int64_t input_dim = 64;
  std::int64_t hidden_dim = 128;
  std::int64_t num_domains = 2;
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);
void to_json(nlohmann::json& j, const ProjectionSpec& s);
void from_json(const nlohmann::json& j, ProjectionSpec& s);
void to_json(nlohmann::json& j, const DomainClassifierSpec& s);
void from_json(const nlohmann::json& j, DomainClassifierSpec& s);

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

// conv3x3 -> GroupNorm -> ReLU -> maxpool, four times, then global average pool.
class SmallCnnImpl : public torch::nn::Module {
 public:
  SmallCnnImpl(std::int64_t in_channels, std::int64_t feature_dim);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(SmallCnn);

class Encoder {
 public:
  explicit Encoder(const EncoderSpec& spec);

  torch::Tensor forward(const torch::Tensor& images);
  void set_frozen(bool frozen);
  void train(bool on);
  bool is_training() const;

  std::vector<torch::Tensor> parameters() const;
  NamedTensors state() const;  // parameters then buffers, stable names
  void load_state(const NamedTensors& state);

  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  SmallCnn cnn_{nullptr};
  std::optional<torch::jit::Module> scripted_;
};

// Checks the minimum image size, honors the frozen switch (no autograd
// history, eval-mode statistics) and returns B x feature_dim.
torch::Tensor encode(Encoder& encoder, const torch::Tensor& images);

class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(std::int64_t in_dim, const ProjectionSpec& spec);
  torch::Tensor forward(const torch::Tensor& features);
  const ProjectionSpec& spec() const { return spec_; }
  std::int64_t in_dim() const { return in_dim_; }

 private:
  ProjectionSpec spec_;
  std::int64_t in_dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  torch::nn::BatchNorm1d bn1_{nullptr}, bn_out_{nullptr};
};
TORCH_MODULE(ProjectionHead);

class DomainClassifierImpl : public torch::nn::Module {
 public:
  explicit DomainClassifierImpl(const DomainClassifierSpec& spec);
  torch::Tensor forward(const torch::Tensor& z);
  const DomainClassifierSpec& spec() const { return spec_; }

 private:
  DomainClassifierSpec spec_;
  torch::nn::BatchNorm1d in_norm_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(DomainClassifier);

// Row-wise L2 normalization; all-zero rows map to the first basis vector.
torch::Tensor l2_normalize_rows(const torch::Tensor& x);

torch::Tensor project(ProjectionHead& head, const torch::Tensor& features);
torch::Tensor classify_domain(DomainClassifier& head, const torch::Tensor& z);

NamedTensors module_state(const torch::nn::Module& m);
void load_module_state(torch::nn::Module& m, const NamedTensors& state);

// FNV-1a over names, shapes and raw bytes of every tensor.
std::uint64_t parameter_checksum(const NamedTensors& state);

}  // namespace invenc::model
