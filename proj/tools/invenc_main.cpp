// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
//
// invenc: synthetic data, two-stage training, evaluation and plots.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "commands.hpp"
#include "invenc/error.hpp"
#include "invenc/training.hpp"

namespace {

using invenc::cli::CommonArgs;

// Binds `--flag value` options that map onto dotted config keys.
struct FlagTable {
  std::vector<std::pair<std::string, std::string>> flag_to_key;
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    flag_to_key.emplace_back(flag, key);
    app->add_option("--" + flag, values[flag], help);
  }

  void collect(CLI::App* app, CommonArgs& args, const std::vector<std::string>& sets) {
    for (const auto& [flag, key] : flag_to_key)
      if (app->count("--" + flag) > 0) args.overrides.emplace_back(key, values[flag]);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw invenc::InvalidArgument("--set expects key=value, got '" + kv + "'");
      args.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
  }
};

void add_common(CLI::App* app, CommonArgs& args, std::vector<std::string>& sets, FlagTable& flags) {
  app->add_option("--config,-c", args.config_path, "TOML config (or a resolved_config.json)");
  app->add_option("--set", sets, "Override any config key: --set stage2.lambda=0.5")->take_all();
  flags.add(app, "run-name", "run_name", "Run directory name under the output dir");
  flags.add(app, "out-dir", "paths.output_dir", "Output root (runs go to <out-dir>/<run-name>)");
  flags.add(app, "data", "paths.data_root", "Dataset root (root/<domain>/*.png); empty = synthetic");
}

void add_train_flags(CLI::App* app, FlagTable& flags, const std::string& section) {
  flags.add(app, "epochs", section + ".epochs", "Training epochs");
  flags.add(app, "batch-size", section + ".batch_size", "Batch size");
  flags.add(app, "lr", section + ".learning_rate", "Learning rate");
  flags.add(app, "weight-decay", section + ".weight_decay", "Weight decay");
  flags.add(app, "seed", section + ".seed", "Seed for init, shuffles and augmentation");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-invariant image embeddings: contrastive learning with gradient reversal"};
  app.require_subcommand(1);

  CommonArgs synth_args, s1_args, s2_args, eval_args, plot_args;
  std::vector<std::string> synth_sets, s1_sets, s2_sets, eval_sets, plot_sets;
  FlagTable synth_flags, s1_flags, s2_flags, eval_flags, plot_flags;
  std::string synth_out, resume, checkpoint, eval_data, eval_out, attach, embeddings, plot_ckpt, plot_data,
      plot_out;
  std::string method = "pca";
  std::uint64_t plot_seed = 0;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic multi-domain dataset on disk");
  add_common(synth, synth_args, synth_sets, synth_flags);
  synth->add_option("--out", synth_out, "Dataset directory (default <out-dir>/<run-name>/dataset)");
  synth_flags.add(synth, "seed", "synthetic.seed", "Generator seed");

  auto* s1 = app.add_subcommand("train-stage1", "Frozen backbone + domain classifier (leakage baseline)");
  add_common(s1, s1_args, s1_sets, s1_flags);
  add_train_flags(s1, s1_flags, "stage1");

  auto* s2 = app.add_subcommand("train-stage2", "Joint contrastive + gradient-reversal training");
  add_common(s2, s2_args, s2_sets, s2_flags);
  add_train_flags(s2, s2_flags, "stage2");
  s2_flags.add(s2, "lambda", "stage2.lambda", "Weight of the adversarial term");
  s2_flags.add(s2, "tau", "stage2.tau", "NT-Xent temperature");
  s2_flags.add(s2, "grl-schedule", "stage2.grl_schedule", "constant | ramp");
  s2_flags.add(s2, "grl-coeff-max", "stage2.grl_coeff_max", "GRL coefficient ceiling");
  s2_flags.add(s2, "attach-point", "classifier.attach_point", "projection_output | backbone_features");
  s2_flags.add(s2, "init", "paths.init_checkpoint", "Initialize the backbone from a checkpoint");
  s2->add_option("--resume", resume, "Continue an interrupted run from its checkpoint");

  auto* ev = app.add_subcommand("evaluate", "Probe a checkpoint: linear probes, k-NN purity, embeddings CSV");
  add_common(ev, eval_args, eval_sets, eval_flags);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--dataset", eval_data, "Dataset root (default: the config's data source)");
  ev->add_option("--out", eval_out, "Output directory (default <out-dir>/<run-name>/eval)");
  ev->add_option("--attach", attach, "projection_output | backbone_features (default from checkpoint)");

  auto* pl = app.add_subcommand("plot", "2-D projection scatter (PNG + coordinates CSV)");
  add_common(pl, plot_args, plot_sets, plot_flags);
  pl->add_option("--embeddings", embeddings, "Embeddings CSV from evaluate");
  pl->add_option("--checkpoint", plot_ckpt, "Checkpoint file (with --dataset or the config's data)");
  pl->add_option("--dataset", plot_data, "Dataset root for --checkpoint");
  pl->add_option("--method", method, "pca | tsne")->check(CLI::IsMember({"pca", "tsne"}));
  pl->add_option("--plot-seed", plot_seed, "t-SNE seed");
  pl->add_option("--out", plot_out, "Scatter PNG path (default <run>/plots/scatter_<method>.png)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
  try {
    invenc::train::configure_backend(invenc::train::deterministic_mode());
    if (synth->parsed()) {
      synth_flags.collect(synth, synth_args, synth_sets);
      return invenc::cli::cmd_synth(synth_args, opt(synth_out));
    }
    if (s1->parsed()) {
      s1_flags.collect(s1, s1_args, s1_sets);
      return invenc::cli::cmd_train_stage1(s1_args);
    }
    if (s2->parsed()) {
      s2_flags.collect(s2, s2_args, s2_sets);
      return invenc::cli::cmd_train_stage2(s2_args, opt(resume));
    }
    if (ev->parsed()) {
      eval_flags.collect(ev, eval_args, eval_sets);
      return invenc::cli::cmd_evaluate(eval_args, checkpoint, opt(eval_data), opt(eval_out), opt(attach));
    }
    if (pl->parsed()) {
      plot_flags.collect(pl, plot_args, plot_sets);
      return invenc::cli::cmd_plot(plot_args, opt(embeddings), opt(plot_ckpt), opt(plot_data), method, plot_seed,
                                   opt(plot_out));
    }
  } catch (const invenc::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
