// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <chrono>
#include <fstream>
#include <iostream>

#include "invenc/checkpoint.hpp"
#include "invenc/error.hpp"
#include "invenc/evaluation.hpp"
#include "invenc/fingerprint.hpp"
#include "invenc/training.hpp"

namespace invenc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

data::Dataset load_data(const config::RunConfig& c, const std::optional<std::string>& root_override = {}) {
  const std::string root = root_override.value_or(c.paths.data_root);
  if (root.empty()) return data::generate_synthetic_dataset(c.synthetic);
  return data::load_dataset(root, {c.image_size});
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json table_metrics(const eval::EmbeddingTable& t, const config::RunConfig& c) {
  json j = {{"num_embeddings", t.rows()}, {"dim", t.dim()}};
  j["domain_probe_acc"] = eval::domain_probe_accuracy(t, c.evaluation.probe_seed);
  j["knn_k"] = c.evaluation.knn_k;
  j["knn_domain_purity"] = eval::knn_domain_purity(t, c.evaluation.knn_k);
  j["content_probe_acc"] = t.content_labels ? json(eval::content_probe_accuracy(t, c.evaluation.probe_seed)) : json();
  return j;
}

void log(const std::string& msg) { std::cerr << msg << std::endl; }

}  // namespace

config::RunConfig resolve_config(const CommonArgs& args) {
  config::RunConfig c = args.config_path.empty() ? config::RunConfig{} : config::load_run_config(args.config_path);
  for (const auto& [key, value] : args.overrides) config::apply_override(c, key, value);
  return c;
}

int cmd_synth(const CommonArgs& args, const std::optional<std::string>& out_dir) {
  const auto c = resolve_config(args);
  fs::path dir = out_dir ? fs::path(*out_dir)
                         : (c.paths.data_root.empty() ? c.run_dir() / "dataset" : fs::path(c.paths.data_root));
  if (!out_dir && c.paths.data_root.empty()) fs::create_directories(c.run_dir());
  const auto ds = data::generate_synthetic_dataset(c.synthetic);
  data::export_dataset(ds, dir, {{"synthetic_spec", c.synthetic}, {"seed", c.synthetic.seed},
                                 {"fingerprint", config::fingerprint(c)}});
  config::write_resolved_config(c, dir);
  log("wrote " + std::to_string(ds.size()) + " images in " + std::to_string(ds.num_domains()) + " domains to " +
      dir.string());
  return 0;
}

int cmd_train_stage1(const CommonArgs& args) {
  const auto c = resolve_config(args);
  const fs::path run = c.run_dir();
  config::write_resolved_config(c, run);
  const auto ds = load_data(c);

  train::Stage1Options o;
  o.train = c.stage1;
  o.encoder = c.encoder;
  o.encoder.frozen = true;
  o.classifier_hidden_dim = c.classifier_hidden_dim;
  o.preprocessing = c.augmentation;
  o.config = config::semantic_json(c);
  o.output_dir = run;
  o.on_epoch = [](const train::MetricsRecord& r) {
    log("stage1 epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.l_dom) + " train_acc " +
        std::to_string(r.domain_train_acc) + " holdout_acc " + std::to_string(*r.domain_probe_acc));
  };
  const auto rep = train::train_stage1(o, ds);

  const auto table = eval::embed_dataset(rep.bundle, ds, model::AttachPoint::backbone_features);
  json report = {{"stage", 1},
                 {"fingerprint", config::fingerprint(c)},
                 {"epochs", c.stage1.epochs},
                 {"num_domains", ds.num_domains()},
                 {"num_images", ds.size()},
                 {"train_domain_acc", rep.train_acc},
                 {"holdout_domain_acc", rep.holdout_acc},
                 {"backbone_frozen", rep.backbone_checksum_before == rep.backbone_checksum_after},
                 {"checkpoint", (run / "checkpoints" / "final.pt").string()},
                 {"frozen_features", table_metrics(table, c)},
                 {"wall_time_s", train::deterministic_mode() ? 0.0 : rep.wall_time_s}};
  write_json(run / "report.json", report);
  log("stage1 holdout domain accuracy " + std::to_string(rep.holdout_acc) + "; report in " +
      (run / "report.json").string());
  return 0;
}

int cmd_train_stage2(const CommonArgs& args, const std::optional<std::string>& resume) {
  const auto c = resolve_config(args);
  const fs::path run = c.run_dir();
  config::write_resolved_config(c, run);
  const auto ds = load_data(c);

  train::Stage2Options o;
  o.train = c.stage2;
  o.encoder = c.encoder;
  o.projection = c.projection;
  o.classifier_hidden_dim = c.classifier_hidden_dim;
  o.attach_point = c.attach_point;
  o.augmentation = c.augmentation;
  o.config = config::semantic_json(c);
  o.output_dir = run;
  if (!c.paths.init_checkpoint.empty()) o.init = load_checkpoint(c.paths.init_checkpoint);
  if (resume) o.resume = load_checkpoint(*resume);
  o.on_epoch = [](const train::MetricsRecord& r) {
    std::string msg = "stage2 epoch " + std::to_string(r.epoch) + " l_con " + std::to_string(r.l_con) + " l_dom " +
                      std::to_string(r.l_dom) + " adv_acc " + std::to_string(r.domain_train_acc);
    if (r.domain_probe_acc) msg += " probe " + std::to_string(*r.domain_probe_acc);
    log(msg);
  };
  const auto rep = train::train_stage2(o, ds);

  const auto table = eval::embed_dataset(rep.final, ds, c.attach_point);
  eval::write_embeddings_csv(table, run / "embeddings.csv");
  json report = {{"stage", 2},
                 {"fingerprint", config::fingerprint(c)},
                 {"epochs", c.stage2.epochs},
                 {"lambda", c.stage2.lambda},
                 {"num_domains", ds.num_domains()},
                 {"num_images", ds.size()},
                 {"attach_point", model::to_string(c.attach_point)},
                 {"checkpoint", (run / "checkpoints" / "final.pt").string()},
                 {"final", rep.metrics.empty() ? json() : json(rep.metrics.back())},
                 {"embeddings", table_metrics(table, c)},
                 {"wall_time_s", train::deterministic_mode() ? 0.0 : rep.wall_time_s}};
  write_json(run / "report.json", report);
  log("stage2 done; domain probe " + std::to_string(report["embeddings"]["domain_probe_acc"].get<double>()) +
      "; report in " + (run / "report.json").string());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint, const std::optional<std::string>& data,
                 const std::optional<std::string>& out_dir, const std::optional<std::string>& attach) {
  const auto bundle = load_checkpoint(checkpoint);
  // Without --config the run's own config (recorded in the sidecar) applies.
  config::RunConfig c;
  if (args.config_path.empty()) {
    c = config::from_json(bundle.config);
    for (const auto& [key, value] : args.overrides) config::apply_override(c, key, value);
  } else {
    c = resolve_config(args);
  }
  const fs::path out = out_dir ? fs::path(*out_dir) : c.run_dir() / "eval";
  config::write_resolved_config(c, out);
  const auto ds = load_data(c, data);
  const auto point = attach ? model::parse_attach_point(*attach) : bundle.attach_point;
  const auto table = eval::embed_dataset(bundle, ds, point);
  eval::write_embeddings_csv(table, out / "embeddings.csv");
  json report = table_metrics(table, c);
  report["checkpoint"] = checkpoint;
  report["checkpoint_fingerprint"] = bundle.fingerprint;
  report["fingerprint"] = config::fingerprint(c);
  report["stage"] = bundle.stage;
  report["attach_point"] = model::to_string(point);
  report["num_domains"] = ds.num_domains();
  write_json(out / "report.json", report);
  log("domain probe " + std::to_string(report["domain_probe_acc"].get<double>()) + ", knn purity " +
      std::to_string(report["knn_domain_purity"].get<double>()) + "; written to " + out.string());
  return 0;
}

int cmd_plot(const CommonArgs& args, const std::optional<std::string>& embeddings,
             const std::optional<std::string>& checkpoint, const std::optional<std::string>& data,
             const std::string& method, std::uint64_t seed, const std::optional<std::string>& out) {
  if (embeddings.has_value() == checkpoint.has_value())
    throw InvalidArgument("plot needs exactly one of --embeddings or --checkpoint");
  const auto c = resolve_config(args);
  eval::EmbeddingTable table;
  std::vector<std::string> names;
  if (embeddings) {
    table = eval::read_embeddings_csv(*embeddings);
  } else {
    const auto bundle = load_checkpoint(*checkpoint);
    const auto ds = load_data(c, data);
    table = eval::embed_dataset(bundle, ds, bundle.attach_point);
    names = ds.domain_names;
  }
  const fs::path png = out ? fs::path(*out) : c.run_dir() / "plots" / ("scatter_" + method + ".png");
  fs::create_directories(png.has_parent_path() ? png.parent_path() : fs::path("."));
  eval::TsneOptions topts;
  topts.iterations = c.evaluation.tsne_iterations;
  topts.perplexity = c.evaluation.tsne_perplexity;
  const auto coords = eval::project_2d(table, eval::parse_projection_method(method), seed, topts);
  const auto csv = eval::export_scatter(coords, table.domain_labels, png, names, table.ids);
  config::write_resolved_config(c, png.has_parent_path() ? png.parent_path() : fs::path("."));
  log("wrote " + png.string() + " and " + csv.string());
  return 0;
}

}  // namespace invenc::cli
