// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <torch/serialize.h>

#include "invenc/error.hpp"
#include "invenc/fingerprint.hpp"

namespace invenc {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

torch::Tensor bytes_to_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<std::int64_t>(s.size())}, torch::kUInt8);
  if (!s.empty()) std::memcpy(t.data_ptr(), s.data(), s.size());
  return t;
}

std::string tensor_to_bytes(const torch::Tensor& t) {
  const auto c = t.contiguous();
  return std::string(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.numel()));
}

void put_state(c10::Dict<std::string, at::Tensor>& dict, const std::string& prefix,
               const model::NamedTensors& state) {
  for (const auto& [name, t] : state) dict.insert(prefix + name, t.detach().clone());
}

model::NamedTensors take_state(const c10::Dict<std::string, at::Tensor>& dict, const std::string& prefix,
                               const model::NamedTensors& layout, const fs::path& path) {
  model::NamedTensors out;
  for (const auto& [name, _] : layout) {
    auto it = dict.find(prefix + name);
    if (it == dict.end()) throw RuntimeFailure("checkpoint " + path.string() + " lacks tensor " + prefix + name);
    out.emplace_back(name, it->value());
  }
  return out;
}

void write_atomically(const fs::path& path, const void* data, std::size_t n) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw RuntimeFailure("short write on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw RuntimeFailure("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace

std::uint64_t CheckpointBundle::encoder_checksum() const {
  return model::parameter_checksum(encoder->state());
}

std::optional<std::uint64_t> CheckpointBundle::projection_checksum() const {
  if (!projection) return std::nullopt;
  return model::parameter_checksum(model::module_state(*projection));
}

std::uint64_t CheckpointBundle::classifier_checksum() const {
  return model::parameter_checksum(model::module_state(*classifier));
}

fs::path sidecar_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".json"); }

void save_checkpoint(const CheckpointBundle& bundle, const fs::path& path) {
  if (!bundle.encoder || !bundle.classifier) throw InvalidArgument("checkpoint bundle is incomplete");
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw RuntimeFailure("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  c10::Dict<std::string, at::Tensor> dict;
  put_state(dict, "encoder.", bundle.encoder->state());
  if (bundle.projection) put_state(dict, "projection.", model::module_state(*bundle.projection));
  put_state(dict, "classifier.", model::module_state(*bundle.classifier));
  if (!bundle.optimizer_main.empty()) dict.insert("optimizer.main", bytes_to_tensor(bundle.optimizer_main));
  if (!bundle.optimizer_classifier.empty())
    dict.insert("optimizer.classifier", bytes_to_tensor(bundle.optimizer_classifier));
  const std::vector<char> blob = torch::pickle_save(c10::IValue(dict));

  nlohmann::json side = {
      {"format_version", kFormatVersion},
      {"stage", bundle.stage},
      {"encoder_spec", bundle.encoder_spec},
      {"projection_spec", bundle.projection_spec ? nlohmann::json(*bundle.projection_spec) : nlohmann::json()},
      {"classifier_spec", bundle.classifier_spec},
      {"attach_point", model::to_string(bundle.attach_point)},
      {"augmentation", bundle.augmentation},
      {"config", bundle.config},
      {"fingerprint", bundle.fingerprint.empty() ? config_fingerprint(bundle.config) : bundle.fingerprint},
      {"epoch", bundle.epoch},
      {"step", bundle.step},
      {"seed", bundle.seed},
      {"checksums",
       {{"encoder", hex64(bundle.encoder_checksum())},
        {"projection", bundle.projection ? nlohmann::json(hex64(*bundle.projection_checksum())) : nlohmann::json()},
        {"classifier", hex64(bundle.classifier_checksum())}}}};
  write_atomically(path, blob.data(), blob.size());
  const std::string text = side.dump(2) + "\n";
  write_atomically(sidecar_path(path), text.data(), text.size());
}

CheckpointBundle load_checkpoint(const fs::path& path) {
  const fs::path side_path = sidecar_path(path);
  if (!fs::exists(path)) throw RuntimeFailure("checkpoint not found: " + path.string());
  if (!fs::exists(side_path)) throw RuntimeFailure("checkpoint sidecar not found: " + side_path.string());

  nlohmann::json side;
  {
    std::ifstream in(side_path);
    try {
      side = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure("malformed sidecar " + side_path.string() + ": " + e.what());
    }
  }
  CheckpointBundle b;
  try {
    if (side.at("format_version").get<int>() != kFormatVersion)
      throw RuntimeFailure("unsupported checkpoint format in " + side_path.string());
    b.stage = side.at("stage").get<int>();
    b.encoder_spec = side.at("encoder_spec").get<model::EncoderSpec>();
    if (!side.at("projection_spec").is_null()) b.projection_spec = side["projection_spec"].get<model::ProjectionSpec>();
    b.classifier_spec = side.at("classifier_spec").get<model::DomainClassifierSpec>();
    b.attach_point = model::parse_attach_point(side.at("attach_point").get<std::string>());
    b.augmentation = side.at("augmentation").get<data::AugmentationConfig>();
    b.config = side.at("config");
    b.fingerprint = side.at("fingerprint").get<std::string>();
    b.epoch = side.at("epoch").get<std::int64_t>();
    b.step = side.at("step").get<std::int64_t>();
    b.seed = side.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("incomplete sidecar " + side_path.string() + ": " + e.what());
  }
  const std::string expected = config_fingerprint(b.config);
  if (expected != b.fingerprint)
    throw RuntimeFailure("config fingerprint mismatch in " + side_path.string() + ": recorded " + b.fingerprint +
                         ", config hashes to " + expected);

  std::vector<char> blob;
  {
    std::ifstream in(path, std::ios::binary);
    blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  c10::Dict<std::string, at::Tensor> dict;
  try {
    auto generic = torch::pickle_load(blob).toGenericDict();
    for (const auto& kv : generic) dict.insert(kv.key().toStringRef(), kv.value().toTensor());
  } catch (const c10::Error& e) {
    throw RuntimeFailure("corrupt checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }

  b.encoder = std::make_shared<model::Encoder>(b.encoder_spec);
  b.encoder->load_state(take_state(dict, "encoder.", b.encoder->state(), path));
  if (b.projection_spec) {
    b.projection = model::ProjectionHead(b.encoder_spec.feature_dim, *b.projection_spec);
    model::load_module_state(*b.projection, take_state(dict, "projection.", model::module_state(*b.projection), path));
  }
  b.classifier = model::DomainClassifier(b.classifier_spec);
  model::load_module_state(*b.classifier, take_state(dict, "classifier.", model::module_state(*b.classifier), path));
  if (auto it = dict.find("optimizer.main"); it != dict.end()) b.optimizer_main = tensor_to_bytes(it->value());
  if (auto it = dict.find("optimizer.classifier"); it != dict.end())
    b.optimizer_classifier = tensor_to_bytes(it->value());

  const auto& sums = side.at("checksums");
  if (sums.at("encoder").get<std::string>() != hex64(b.encoder_checksum()) ||
      sums.at("classifier").get<std::string>() != hex64(b.classifier_checksum()) ||
      (b.projection && sums.at("projection").get<std::string>() != hex64(*b.projection_checksum())))
    throw RuntimeFailure("tensor checksums in " + path.string() + " do not match its sidecar");
  b.encoder->set_frozen(b.encoder_spec.frozen);
  return b;
}

}  // namespace invenc
