// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/models.hpp"

#include <cstring>
#include <numeric>
#include <filesystem>

#include "invenc/error.hpp"

namespace invenc::model {

namespace F = torch::nn::functional;

std::string to_string(EncoderKind k) {
  return k == EncoderKind::small_cnn ? "small_cnn" : "pretrained_convnext";
}

std::string to_string(AttachPoint a) {
  return a == AttachPoint::projection_output ? "projection_output" : "backbone_features";
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "small_cnn") return EncoderKind::small_cnn;
  if (s == "pretrained_convnext") return EncoderKind::pretrained_convnext;
  throw InvalidArgument("unknown encoder kind '" + s + "' (small_cnn | pretrained_convnext)");
}

AttachPoint parse_attach_point(const std::string& s) {
  if (s == "projection_output") return AttachPoint::projection_output;
  if (s == "backbone_features") return AttachPoint::backbone_features;
  throw InvalidArgument("unknown attach point '" + s +
                        "' (projection_output | backbone_features)");
}

void EncoderSpec::validate() const {
  if (feature_dim < 1) throw InvalidArgument("encoder.feature_dim must be positive");
  if (in_channels < 1) throw InvalidArgument("encoder.in_channels must be positive");
  if (kind == EncoderKind::small_cnn && feature_dim < 8)
    throw InvalidArgument("small_cnn needs feature_dim >= 8");
  if (kind == EncoderKind::pretrained_convnext && weights_path.empty())
    throw InvalidArgument("pretrained_convnext requires an explicit encoder.weights_path");
}

void ProjectionSpec::validate() const {
  if (hidden_dim < 1) throw InvalidArgument("projection.hidden_dim must be positive");
  if (output_dim < 2) throw InvalidArgument("projection.output_dim must be >= 2");
}

void DomainClassifierSpec::validate() const {
  if (input_dim < 1) throw InvalidArgument("classifier input_dim must be positive");
  if (hidden_dim < 1) throw InvalidArgument("classifier.hidden_dim must be positive");
  if (num_domains < 2) throw InvalidArgument("domain classifier needs G >= 2");
}

void to_json(nlohmann::json& j, const EncoderSpec& s) {
  j = {{"kind", to_string(s.kind)},
       {"feature_dim", s.feature_dim},
       {"frozen", s.frozen},
       {"weights_path", s.weights_path},
       {"in_channels", s.in_channels}};
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
  s.kind = parse_encoder_kind(j.at("kind").get<std::string>());
  s.feature_dim = j.at("feature_dim").get<std::int64_t>();
  s.frozen = j.value("frozen", false);
  s.weights_path = j.value("weights_path", std::string());
  s.in_channels = j.value("in_channels", std::int64_t{3});
}

void to_json(nlohmann::json& j, const ProjectionSpec& s) {
  j = {{"hidden_dim", s.hidden_dim}, {"output_dim", s.output_dim}, {"normalize", s.normalize}};
}

void from_json(const nlohmann::json& j, ProjectionSpec& s) {
  s.hidden_dim = j.at("hidden_dim").get<std::int64_t>();
  s.output_dim = j.at("output_dim").get<std::int64_t>();
  s.normalize = j.value("normalize", true);
}

void to_json(nlohmann::json& j, const DomainClassifierSpec& s) {
  j = {{"input_dim", s.input_dim}, {"hidden_dim", s.hidden_dim}, {"num_domains", s.num_domains}};
}

void from_json(const nlohmann::json& j, DomainClassifierSpec& s) {
  s.input_dim = j.at("input_dim").get<std::int64_t>();
  s.hidden_dim = j.at("hidden_dim").get<std::int64_t>();
  s.num_domains = j.at("num_domains").get<std::int64_t>();
}

SmallCnnImpl::SmallCnnImpl(std::int64_t in_channels, std::int64_t feature_dim) {
  body_ = torch::nn::Sequential();
  std::int64_t c_in = in_channels;
  for (std::int64_t div : {8, 4, 2, 1}) {
    const std::int64_t c = std::max<std::int64_t>(1, feature_dim / div);
    body_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(c_in, c, 3).padding(1)));
    body_->push_back(torch::nn::GroupNorm(torch::nn::GroupNormOptions(std::gcd(c, std::int64_t{8}), c)));
    body_->push_back(torch::nn::ReLU());
    body_->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));
    c_in = c;
  }
  register_module("body", body_);
}

torch::Tensor SmallCnnImpl::forward(const torch::Tensor& x) {
  return body_->forward(x).mean({2, 3});
}

Encoder::Encoder(const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == EncoderKind::small_cnn) {
    cnn_ = SmallCnn(spec_.in_channels, spec_.feature_dim);
  } else {
    if (!std::filesystem::exists(spec_.weights_path))
      throw RuntimeFailure("encoder weights not found: " + spec_.weights_path);
    try {
      scripted_ = torch::jit::load(spec_.weights_path);
    } catch (const c10::Error& e) {
      throw RuntimeFailure("cannot load TorchScript backbone " + spec_.weights_path + ": " +
                           e.what_without_backtrace());
    }
  }
  set_frozen(spec_.frozen);
}

torch::Tensor Encoder::forward(const torch::Tensor& images) {
  if (cnn_) return cnn_->forward(images);
  auto out = scripted_->forward({images}).toTensor();
  if (out.dim() != 2 || out.size(1) != spec_.feature_dim)
    throw RuntimeFailure("TorchScript backbone returned shape " + c10::str(out.sizes()) +
                         ", expected B x " + std::to_string(spec_.feature_dim));
  return out;
}

void Encoder::set_frozen(bool frozen) {
  spec_.frozen = frozen;
  for (auto& p : parameters()) p.set_requires_grad(!frozen);
  if (frozen) train(false);
}

void Encoder::train(bool on) {
  if (cnn_) {
    cnn_->train(on);
  } else {
    scripted_->train(on);
  }
}

bool Encoder::is_training() const { return cnn_ ? cnn_->is_training() : scripted_->is_training(); }

std::vector<torch::Tensor> Encoder::parameters() const {
  if (cnn_) return cnn_->parameters();
  std::vector<torch::Tensor> out;
  for (const auto& p : scripted_->parameters()) out.push_back(p);
  return out;
}

NamedTensors Encoder::state() const {
  if (cnn_) return module_state(*cnn_);
  NamedTensors out;
  for (const auto& p : scripted_->named_parameters()) out.emplace_back("param." + p.name, p.value);
  for (const auto& b : scripted_->named_buffers()) out.emplace_back("buffer." + b.name, b.value);
  return out;
}

void Encoder::load_state(const NamedTensors& state) {
  if (cnn_) {
    load_module_state(*cnn_, state);
    return;
  }
  auto current = this->state();
  if (current.size() != state.size())
    throw RuntimeFailure("encoder state has " + std::to_string(state.size()) +
                         " tensors, backbone expects " + std::to_string(current.size()));
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (current[i].first != state[i].first || !current[i].second.sizes().equals(state[i].second.sizes()))
      throw RuntimeFailure("encoder state mismatch at " + state[i].first);
    current[i].second.copy_(state[i].second);
  }
}

torch::Tensor encode(Encoder& encoder, const torch::Tensor& images) {
  if (images.dim() != 4) throw InvalidArgument("encode expects a B x C x H x W batch");
  if (images.size(1) != encoder.spec().in_channels)
    throw InvalidArgument("encode: expected " + std::to_string(encoder.spec().in_channels) +
                          " channels, got " + std::to_string(images.size(1)));
  if (images.size(2) < kMinImageSide || images.size(3) < kMinImageSide)
    throw InvalidArgument("image " + std::to_string(images.size(2)) + "x" +
                          std::to_string(images.size(3)) + " is smaller than the minimum " +
                          std::to_string(kMinImageSide) + "x" + std::to_string(kMinImageSide));
  if (encoder.spec().frozen) {
    torch::NoGradGuard guard;
    encoder.train(false);
    return encoder.forward(images);
  }
  return encoder.forward(images);
}

ProjectionHeadImpl::ProjectionHeadImpl(std::int64_t in_dim, const ProjectionSpec& spec)
    : spec_(spec), in_dim_(in_dim) {
  spec_.validate();
  fc1_ = register_module("fc1", torch::nn::Linear(in_dim, spec_.hidden_dim));
  bn1_ = register_module("bn1", torch::nn::BatchNorm1d(spec_.hidden_dim));
  fc2_ = register_module("fc2", torch::nn::Linear(spec_.hidden_dim, spec_.output_dim));
  bn_out_ = register_module(
      "bn_out", torch::nn::BatchNorm1d(torch::nn::BatchNormOptions(spec_.output_dim).affine(false)));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& features) {
  auto h = torch::relu(bn1_->forward(fc1_->forward(features)));
  auto z = bn_out_->forward(fc2_->forward(h));
  return spec_.normalize ? l2_normalize_rows(z) : z;
}

DomainClassifierImpl::DomainClassifierImpl(const DomainClassifierSpec& spec) : spec_(spec) {
  spec_.validate();
  in_norm_ = register_module(
      "in_norm", torch::nn::BatchNorm1d(torch::nn::BatchNormOptions(spec_.input_dim).affine(false)));
  fc1_ = register_module("fc1", torch::nn::Linear(spec_.input_dim, spec_.hidden_dim));
  fc2_ = register_module("fc2", torch::nn::Linear(spec_.hidden_dim, spec_.num_domains));
  torch::NoGradGuard guard;
  fc2_->weight.zero_();
  fc2_->bias.zero_();
}

torch::Tensor DomainClassifierImpl::forward(const torch::Tensor& z) {
  return fc2_->forward(torch::relu(fc1_->forward(in_norm_->forward(z))));
}

torch::Tensor l2_normalize_rows(const torch::Tensor& x) {
  const auto norms = x.norm(2, 1, /*keepdim=*/true);
  const auto zero = norms == 0;
  auto basis = torch::zeros_like(x);
  if (x.size(1) > 0) basis.select(1, 0).fill_(1.0);
  // Dividing by 1 on zero rows keeps the graph NaN-free before the swap.
  const auto safe = x / torch::where(zero, torch::ones_like(norms), norms);
  return torch::where(zero, basis, safe);
}

torch::Tensor project(ProjectionHead& head, const torch::Tensor& features) {
  if (features.dim() != 2 || features.size(1) != head->in_dim())
    throw InvalidArgument("project: features must be B x " + std::to_string(head->in_dim()));
  if (features.size(0) == 0)
    return torch::zeros({0, head->spec().output_dim}, features.options());
  return head->forward(features);
}

torch::Tensor classify_domain(DomainClassifier& head, const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != head->spec().input_dim)
    throw InvalidArgument("classify_domain: embedding width " +
                          std::to_string(z.dim() == 2 ? z.size(1) : -1) +
                          " does not match the head's input_dim " +
                          std::to_string(head->spec().input_dim));
  return head->forward(z);
}

NamedTensors module_state(const torch::nn::Module& m) {
  NamedTensors out;
  for (const auto& p : m.named_parameters()) out.emplace_back("param." + p.key(), p.value());
  for (const auto& b : m.named_buffers()) out.emplace_back("buffer." + b.key(), b.value());
  return out;
}

void load_module_state(torch::nn::Module& m, const NamedTensors& state) {
  auto current = module_state(m);
  if (current.size() != state.size())
    throw RuntimeFailure("module state has " + std::to_string(state.size()) +
                         " tensors, module expects " + std::to_string(current.size()));
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (current[i].first != state[i].first ||
        !current[i].second.sizes().equals(state[i].second.sizes()))
      throw RuntimeFailure("module state mismatch at " + state[i].first);
    current[i].second.copy_(state[i].second);
  }
}

std::uint64_t parameter_checksum(const NamedTensors& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : state) {
    feed(name.data(), name.size());
    for (auto s : t.sizes()) feed(&s, sizeof(s));
    const auto c = t.detach().contiguous().cpu();
    feed(c.data_ptr(), c.numel() * c.element_size());
  }
  return h;
}

}  // namespace invenc::model
