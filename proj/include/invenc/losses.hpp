// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <torch/torch.h>

namespace invenc::losses {

struct ContrastiveConfig {
  double temperature = 0.5;
  void validate() const;
};

// 2N unit rows plus an involutive pairing (partner[partner[i]] == i, no
// fixed points). The tensor keeps its autograd history.
class EmbeddingBatch {
 public:
  EmbeddingBatch(torch::Tensor vectors, std::vector<std::int64_t> partner);

  // Standard two-view layout: rows [0, N) are view a, [N, 2N) view b.
  static EmbeddingBatch from_views(torch::Tensor vectors);

  const torch::Tensor& vectors() const { return vectors_; }
  const std::vector<std::int64_t>& partner() const { return partner_; }
  std::int64_t rows() const { return vectors_.size(0); }

 private:
  torch::Tensor vectors_;
  std::vector<std::int64_t> partner_;
};

struct DomainLabels {
  std::vector<std::int64_t> labels;
  std::int64_t num_domains = 0;
  void validate() const;
  torch::Tensor tensor() const;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Per-anchor NT-Xent term; differentiable 0-dim tensor.
torch::Tensor ntxent_pair_loss(std::int64_t i, const EmbeddingBatch& batch,
                               const ContrastiveConfig& cfg);

// Mean of the pair term over all 2N anchors.
torch::Tensor ntxent_batch_loss(const EmbeddingBatch& batch, const ContrastiveConfig& cfg);

torch::Tensor domain_loss(const torch::Tensor& logits, const DomainLabels& labels);

// Identity forward; backward multiplies the incoming gradient by -coeff.
torch::Tensor grl_apply(const torch::Tensor& x, double coeff);

double total_loss(double l_con, double l_dom, double lambda);
torch::Tensor total_loss(const torch::Tensor& l_con, const torch::Tensor& l_dom, double lambda);

}  // namespace invenc::losses
