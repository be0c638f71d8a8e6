// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/losses.hpp"

#include <cmath>
#include <string>

#include "invenc/error.hpp"

namespace invenc::losses {

namespace {

namespace F = torch::nn::functional;

class GradientReversal : public torch::autograd::Function<GradientReversal> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x,
                               double coeff) {
    ctx->saved_data["coeff"] = coeff;
    return x.view_as(x);
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grads) {
    const double coeff = ctx->saved_data["coeff"].toDouble();
    return {grads[0] * (-coeff), torch::Tensor()};
  }
};

// Cosine similarity matrix scaled by 1/tau. Rows are renormalized so that the
// operator is exactly cosine even for slightly off-unit inputs.
torch::Tensor scaled_similarity(const EmbeddingBatch& batch, const ContrastiveConfig& cfg) {
  const auto z = F::normalize(batch.vectors(), F::NormalizeFuncOptions().dim(1).eps(1e-12));
  return torch::matmul(z, z.t()) / cfg.temperature;
}

torch::Tensor partner_tensor(const EmbeddingBatch& batch) {
  return torch::tensor(batch.partner(), torch::kLong);
}

}  // namespace

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw InvalidArgument("temperature must be positive, got " + std::to_string(temperature));
}

EmbeddingBatch::EmbeddingBatch(torch::Tensor vectors, std::vector<std::int64_t> partner)
    : vectors_(std::move(vectors)), partner_(std::move(partner)) {
  if (vectors_.dim() != 2) throw InvalidArgument("embedding batch must be a matrix");
  const std::int64_t n = vectors_.size(0);
  if (n < 2) throw InvalidArgument("embedding batch needs at least one pair (2N >= 2)");
  if (static_cast<std::int64_t>(partner_.size()) != n)
    throw InvalidArgument("pairing length does not match the number of rows");
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t j = partner_[i];
    if (j < 0 || j >= n || j == i || partner_[j] != i)
      throw InvalidArgument("pairing is not a fixed-point-free involution at row " +
                            std::to_string(i));
  }
  const auto norms = vectors_.detach().to(torch::kDouble).norm(2, 1);
  const double worst = (norms - 1.0).abs().max().item<double>();
  if (!(worst <= 1e-5))
    throw InvalidArgument("embedding rows must have unit L2 norm (max deviation " +
                          std::to_string(worst) + ")");
}

EmbeddingBatch EmbeddingBatch::from_views(torch::Tensor vectors) {
  const std::int64_t rows = vectors.size(0);
  if (rows % 2 != 0) throw InvalidArgument("two-view batch needs an even number of rows");
  const std::int64_t n = rows / 2;
  std::vector<std::int64_t> partner(static_cast<std::size_t>(rows));
  for (std::int64_t i = 0; i < n; ++i) {
    partner[i] = i + n;
    partner[i + n] = i;
  }
  return EmbeddingBatch(std::move(vectors), std::move(partner));
}

void DomainLabels::validate() const {
  if (num_domains < 1) throw InvalidArgument("num_domains must be positive");
  for (std::int64_t l : labels)
    if (l < 0 || l >= num_domains)
      throw InvalidArgument("domain label " + std::to_string(l) + " outside [0, " +
                            std::to_string(num_domains) + ")");
}

torch::Tensor DomainLabels::tensor() const { return torch::tensor(labels, torch::kLong); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("degenerate embedding");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

torch::Tensor ntxent_pair_loss(std::int64_t i, const EmbeddingBatch& batch,
                               const ContrastiveConfig& cfg) {
  cfg.validate();
  if (i < 0 || i >= batch.rows()) throw InvalidArgument("anchor index out of range");
  const auto z = F::normalize(batch.vectors(), F::NormalizeFuncOptions().dim(1).eps(1e-12));
  auto row = torch::mv(z, z[i]) / cfg.temperature;
  auto mask = torch::ones({batch.rows()}, torch::kBool);
  mask[i] = false;
  const auto log_denominator = torch::logsumexp(row.masked_select(mask), 0);
  return log_denominator - row[batch.partner()[i]];
}

torch::Tensor ntxent_batch_loss(const EmbeddingBatch& batch, const ContrastiveConfig& cfg) {
  cfg.validate();
  auto sim = scaled_similarity(batch, cfg);
  const auto self = torch::eye(batch.rows(), torch::TensorOptions().dtype(torch::kBool));
  sim = sim.masked_fill(self, -std::numeric_limits<double>::infinity());
  const auto positives = sim.gather(1, partner_tensor(batch).unsqueeze(1)).squeeze(1);
  return (torch::logsumexp(sim, 1) - positives).mean();
}

torch::Tensor domain_loss(const torch::Tensor& logits, const DomainLabels& labels) {
  labels.validate();
  if (logits.dim() != 2 || logits.size(0) < 1)
    throw InvalidArgument("domain_loss expects a non-empty B x G logit matrix");
  if (logits.size(0) != static_cast<std::int64_t>(labels.labels.size()))
    throw InvalidArgument("domain_loss: batch size does not match label count");
  if (logits.size(1) != labels.num_domains)
    throw InvalidArgument("domain_loss: logit width does not match num_domains");
  return F::cross_entropy(logits, labels.tensor());
}

torch::Tensor grl_apply(const torch::Tensor& x, double coeff) {
  if (!(coeff >= 0.0)) throw InvalidArgument("GRL coefficient must be nonnegative");
  return GradientReversal::apply(x, coeff);
}

double total_loss(double l_con, double l_dom, double lambda) { return l_con + lambda * l_dom; }

torch::Tensor total_loss(const torch::Tensor& l_con, const torch::Tensor& l_dom, double lambda) {
  return l_con + lambda * l_dom;
}

}  // namespace invenc::losses
