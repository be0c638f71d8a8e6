// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "invenc/config.hpp"

namespace invenc::cli {

// Flag values in the order they were declared; applied over the config file.
using Overrides = std::vector<std::pair<std::string, std::string>>;

struct CommonArgs {
  std::string config_path;
  Overrides overrides;
};

config::RunConfig resolve_config(const CommonArgs& args);

int cmd_synth(const CommonArgs& args, const std::optional<std::string>& out_dir);
int cmd_train_stage1(const CommonArgs& args);
int cmd_train_stage2(const CommonArgs& args, const std::optional<std::string>& resume);
int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint, const std::optional<std::string>& data,
                 const std::optional<std::string>& out_dir, const std::optional<std::string>& attach);
int cmd_plot(const CommonArgs& args, const std::optional<std::string>& embeddings,
             const std::optional<std::string>& checkpoint, const std::optional<std::string>& data,
             const std::string& method, std::uint64_t seed, const std::optional<std::string>& out);

}  // namespace invenc::cli
