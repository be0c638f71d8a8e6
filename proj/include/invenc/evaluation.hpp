// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "invenc/checkpoint.hpp"
#include "invenc/data.hpp"
#include "invenc/models.hpp"

namespace invenc::eval {

// vectors is M x d float64.
struct EmbeddingTable {
  torch::Tensor vectors;
  std::vector<std::int64_t> domain_labels;
  std::optional<std::vector<std::int64_t>> content_labels;
  std::vector<std::string> ids;

  std::int64_t rows() const { return static_cast<std::int64_t>(domain_labels.size()); }
  std::int64_t dim() const { return vectors.size(1); }
  void validate() const;
};

// Deterministic embedding pass (eval mode, center crop only). A null
// projection is only valid with backbone_features.
EmbeddingTable embed_with(model::Encoder& encoder, model::ProjectionHead* projection,
                          const data::AugmentationConfig& preprocessing, const data::Dataset& dataset,
                          model::AttachPoint attach_point, std::int64_t chunk = 64);

EmbeddingTable embed_dataset(const CheckpointBundle& checkpoint, const data::Dataset& dataset,
                             model::AttachPoint attach_point);

struct ProbeOptions {
  double train_fraction = 0.8;
  double l2_penalty = 1e-3;
  std::int64_t max_iter = 500;
  std::int64_t min_per_class = 10;
};

// Multinomial logistic regression on standardized features, fit by LBFGS on
// a seeded stratified split; returns holdout accuracy.
double linear_probe_accuracy(const torch::Tensor& features, const std::vector<std::int64_t>& labels,
                             std::uint64_t seed, const ProbeOptions& opts = {});

double domain_probe_accuracy(const EmbeddingTable& table, std::uint64_t seed, const ProbeOptions& opts = {});
double content_probe_accuracy(const EmbeddingTable& table, std::uint64_t seed, const ProbeOptions& opts = {});

// Mean fraction of the k cosine-nearest neighbours (self excluded, ties broken
// by lower index) sharing the point's domain label.
double knn_domain_purity(const EmbeddingTable& table, std::int64_t k);

enum class ProjectionMethod { pca, tsne };
ProjectionMethod parse_projection_method(const std::string& s);

struct TsneOptions {
  double perplexity = 30.0;
  std::int64_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  std::int64_t exaggeration_iters = 250;
};

// M x 2 float64.
torch::Tensor project_2d(const EmbeddingTable& table, ProjectionMethod method, std::uint64_t seed,
                         const TsneOptions& tsne = {});

torch::Tensor pca_2d(const torch::Tensor& x);
torch::Tensor tsne_2d(const torch::Tensor& x, std::uint64_t seed, const TsneOptions& opts);

// Writes the scatter PNG at out_path and `id,x,y,label` CSV next to it
// (same stem, .csv). Returns the CSV path.
std::filesystem::path export_scatter(const torch::Tensor& coords, const std::vector<std::int64_t>& labels,
                                     const std::filesystem::path& out_path,
                                     const std::vector<std::string>& label_names = {},
                                     const std::vector<std::string>& ids = {});

struct ScatterRow {
  std::string id;
  double x = 0.0, y = 0.0;
  std::int64_t label = 0;
};
std::vector<ScatterRow> read_scatter_csv(const std::filesystem::path& path);

void write_embeddings_csv(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable read_embeddings_csv(const std::filesystem::path& path);

}  // namespace invenc::eval
