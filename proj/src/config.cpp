// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/config.hpp"

#include <fstream>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "invenc/error.hpp"
#include "invenc/fingerprint.hpp"

namespace invenc::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  throw InvalidArgument("unsupported TOML value (dates and times are not config values)");
}

// Overlays `src` onto `dst`, which holds the defaults and therefore the
// schema: keys and value kinds not present there are rejected.
void merge_strict(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw InvalidArgument("config section '" + where + "' must be a table");
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!dst.contains(key)) throw InvalidArgument("unknown config key '" + path + "'");
    json& slot = dst[key];
    if (slot.is_object()) {
      merge_strict(slot, value, path);
    } else if (slot.is_number_float()) {
      if (!value.is_number()) throw InvalidArgument("config key '" + path + "' expects a number");
      slot = value.get<double>();
    } else if (slot.is_number_unsigned()) {
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0)
        throw InvalidArgument("config key '" + path + "' expects a nonnegative integer");
      slot = value.get<std::uint64_t>();
    } else if (slot.is_number_integer()) {
      if (!value.is_number_integer()) throw InvalidArgument("config key '" + path + "' expects an integer");
      slot = value.get<std::int64_t>();
    } else if (slot.is_boolean()) {
      if (!value.is_boolean()) throw InvalidArgument("config key '" + path + "' expects true or false");
      slot = value;
    } else if (slot.is_string()) {
      if (!value.is_string()) throw InvalidArgument("config key '" + path + "' expects a string");
      slot = value;
    } else {
      slot = value;
    }
  }
}

json strip_frozen(json encoder) {
  encoder.erase("frozen");
  return encoder;
}

}  // namespace

train::TrainConfig RunConfig::default_stage1() {
  train::TrainConfig c;
  c.stage = 1;
  c.epochs = 20;
  c.batch_size = 16;
  c.learning_rate = 1e-3;
  return c;
}

void RunConfig::validate() const {
  if (run_name.empty() || run_name.find('/') != std::string::npos)
    throw InvalidArgument("run_name must be a non-empty single path component");
  if (image_size < 32 && image_size != 0) throw InvalidArgument("data.image_size must be 0 or >= 32");
  synthetic.validate();
  augmentation.validate();
  encoder.validate();
  projection.validate();
  if (classifier_hidden_dim < 1) throw InvalidArgument("classifier.hidden_dim must be positive");
  stage1.validate();
  stage2.validate();
  if (stage1.stage != 1 || stage2.stage != 2) throw InvalidArgument("stage1/stage2 sections must keep their stage");
  if (evaluation.knn_k < 1) throw InvalidArgument("evaluation.knn_k must be >= 1");
  if (evaluation.plot_method != "pca" && evaluation.plot_method != "tsne")
    throw InvalidArgument("evaluation.plot_method must be pca or tsne");
}

json to_json(const RunConfig& c) {
  return {{"run_name", c.run_name},
          {"paths",
           {{"data_root", c.paths.data_root},
            {"output_dir", c.paths.output_dir},
            {"init_checkpoint", c.paths.init_checkpoint}}},
          {"data", {{"image_size", c.image_size}}},
          {"synthetic", c.synthetic},
          {"augmentation", c.augmentation},
          {"encoder", strip_frozen(c.encoder)},
          {"projection", c.projection},
          {"classifier", {{"hidden_dim", c.classifier_hidden_dim}, {"attach_point", model::to_string(c.attach_point)}}},
          {"stage1", c.stage1},
          {"stage2", c.stage2},
          {"evaluation",
           {{"knn_k", c.evaluation.knn_k},
            {"probe_seed", c.evaluation.probe_seed},
            {"plot_method", c.evaluation.plot_method},
            {"tsne_iterations", c.evaluation.tsne_iterations},
            {"tsne_perplexity", c.evaluation.tsne_perplexity}}}};
}

RunConfig from_json(const json& in) {
  json j = to_json(RunConfig{});
  merge_strict(j, in, "");
  RunConfig c;
  try {
    c.run_name = j["run_name"].get<std::string>();
    c.paths.data_root = j["paths"]["data_root"].get<std::string>();
    c.paths.output_dir = j["paths"]["output_dir"].get<std::string>();
    c.paths.init_checkpoint = j["paths"]["init_checkpoint"].get<std::string>();
    c.image_size = j["data"]["image_size"].get<std::int64_t>();
    c.synthetic = j["synthetic"].get<data::SyntheticSpec>();
    c.augmentation = j["augmentation"].get<data::AugmentationConfig>();
    c.encoder = j["encoder"].get<model::EncoderSpec>();
    c.projection = j["projection"].get<model::ProjectionSpec>();
    c.classifier_hidden_dim = j["classifier"]["hidden_dim"].get<std::int64_t>();
    c.attach_point = model::parse_attach_point(j["classifier"]["attach_point"].get<std::string>());
    c.stage1 = j["stage1"].get<train::TrainConfig>();
    c.stage2 = j["stage2"].get<train::TrainConfig>();
    const auto& e = j["evaluation"];
    c.evaluation.knn_k = e["knn_k"].get<std::int64_t>();
    c.evaluation.probe_seed = e["probe_seed"].get<std::uint64_t>();
    c.evaluation.plot_method = e["plot_method"].get<std::string>();
    c.evaluation.tsne_iterations = e["tsne_iterations"].get<std::int64_t>();
    c.evaluation.tsne_perplexity = e["tsne_perplexity"].get<double>();
  } catch (const json::exception& ex) {
    throw InvalidArgument(std::string("invalid config: ") + ex.what());
  }
  c.validate();
  return c;
}

json semantic_json(const RunConfig& c) {
  json j = to_json(c);
  j.erase("run_name");
  j["paths"].erase("output_dir");
  return j;
}

std::string fingerprint(const RunConfig& c) { return config_fingerprint(semantic_json(c)); }

RunConfig parse_toml_string(const std::string& text) {
  toml::table tbl;
  try {
    tbl = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error: " << e.description() << " (line " << e.source().begin.line << ")";
    throw InvalidArgument(os.str());
  }
  return from_json(toml_to_json(tbl));
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") {
    json j;
    try {
      j = json::parse(ss.str());
    } catch (const json::exception& e) {
      throw InvalidArgument("config parse error in " + path.string() + ": " + e.what());
    }
    // resolved_config.json wraps the config next to its fingerprint.
    if (j.contains("config") && j.contains("fingerprint")) j = j["config"];
    return from_json(j);
  }
  return parse_toml_string(ss.str());
}

void apply_override(RunConfig& c, const std::string& dotted_key, const std::string& value) {
  json current = to_json(c);
  json* slot = &current;
  std::string key;
  std::stringstream ks(dotted_key);
  std::vector<std::string> parts;
  while (std::getline(ks, key, '.')) parts.push_back(key);
  json patch = json::object();
  json* p = &patch;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!slot->is_object() || !slot->contains(parts[i]))
      throw InvalidArgument("unknown config key '" + dotted_key + "'");
    slot = &(*slot)[parts[i]];
    if (i + 1 < parts.size()) p = &(*p)[parts[i]];
  }
  json v;
  try {
    if (slot->is_boolean()) {
      if (value != "true" && value != "false") throw InvalidArgument("");
      v = value == "true";
    } else if (slot->is_number_float()) {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw InvalidArgument("");
    } else if (slot->is_number_integer()) {
      std::size_t used = 0;
      v = static_cast<std::int64_t>(std::stoll(value, &used));
      if (used != value.size()) throw InvalidArgument("");
    } else if (slot->is_string()) {
      v = value;
    } else {
      throw InvalidArgument("");
    }
  } catch (const std::exception&) {
    throw InvalidArgument("invalid value '" + value + "' for config key '" + dotted_key + "'");
  }
  (*p)[parts.back()] = v;
  merge_strict(current, patch, "");
  c = from_json(current);
}

json resolved_json(const RunConfig& c) {
  return {{"config", to_json(c)}, {"fingerprint", fingerprint(c)}};
}

void write_resolved_config(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "resolved_config.json");
  if (!out) throw RuntimeFailure("cannot write " + (dir / "resolved_config.json").string());
  out << resolved_json(c).dump(2) << '\n';
}

}  // namespace invenc::config
