// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <torch/serialize.h>

#include "invenc/error.hpp"
#include "invenc/evaluation.hpp"
#include "invenc/fingerprint.hpp"
#include "invenc/losses.hpp"
#include "invenc/rng.hpp"

namespace invenc::train {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kStreamStage1 = 0x5331;
constexpr std::uint64_t kStreamEpoch = 0x4550;
constexpr std::uint64_t kStreamView = 0x5657;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string save_optimizer(torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive ar;
  opt.save(ar);
  std::ostringstream os;
  ar.save_to(os);
  return os.str();
}

void load_optimizer(torch::optim::Optimizer& opt, const std::string& blob) {
  if (blob.empty()) throw RuntimeFailure("checkpoint carries no optimizer state; cannot resume");
  torch::serialize::InputArchive ar;
  std::istringstream is(blob);
  ar.load_from(is);
  opt.load(ar);
}

std::vector<std::int64_t> to_vector(const torch::Tensor& t) {
  const auto c = t.to(torch::kLong).contiguous();
  return {c.data_ptr<std::int64_t>(), c.data_ptr<std::int64_t>() + c.numel()};
}

void write_jsonl(const fs::path& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
}

void append_jsonl(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw RuntimeFailure("cannot append to " + path.string());
  out << j.dump() << '\n';
}

std::vector<MetricsRecord> read_jsonl(const fs::path& path) {
  std::vector<MetricsRecord> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line).get<MetricsRecord>());
  return out;
}

void check_finite(const torch::Tensor& value, const char* term, std::int64_t epoch, std::int64_t step) {
  if (!std::isfinite(value.item<double>()))
    throw RuntimeFailure(std::string("non-finite ") + term + " at epoch " + std::to_string(epoch) + ", step " +
                         std::to_string(step) + "; lower the learning rate or enable train.grad_clip_norm");
}

double accuracy(const torch::Tensor& logits, const torch::Tensor& labels) {
  return logits.argmax(1).eq(labels).to(torch::kDouble).mean().item<double>();
}

}  // namespace

std::string to_string(GrlSchedule s) { return s == GrlSchedule::constant ? "constant" : "ramp"; }

GrlSchedule parse_grl_schedule(const std::string& s) {
  if (s == "constant") return GrlSchedule::constant;
  if (s == "ramp") return GrlSchedule::ramp;
  throw InvalidArgument("unknown GRL schedule '" + s + "' (constant | ramp)");
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw InvalidArgument("train.stage must be 1 or 2");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (weight_decay < 0.0) throw InvalidArgument("weight_decay must be nonnegative");
  if (eval_every < 0) throw InvalidArgument("eval_every must be >= 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw InvalidArgument("holdout_fraction must be in (0, 1)");
  if (stage == 2) {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be nonnegative");
    if (!(tau > 0.0)) throw InvalidArgument("tau must be positive");
    if (!(grl_coeff_max >= 0.0)) throw InvalidArgument("grl_coeff_max must be nonnegative");
    if (classifier_refine_steps < 0) throw InvalidArgument("classifier_refine_steps must be >= 0");
    if (!(classifier_lr_multiplier > 0.0)) throw InvalidArgument("classifier_lr_multiplier must be positive");
    if (grad_clip_norm < 0.0) throw InvalidArgument("grad_clip_norm must be nonnegative");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"stage", c.stage},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"lambda", c.lambda},
       {"tau", c.tau},
       {"grl_schedule", to_string(c.grl_schedule)},
       {"grl_coeff_max", c.grl_coeff_max},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"classifier_refine_steps", c.classifier_refine_steps},
       {"classifier_lr_multiplier", c.classifier_lr_multiplier},
       {"grad_clip_norm", c.grad_clip_norm},
       {"holdout_fraction", c.holdout_fraction},
       {"probe_seed", c.probe_seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.stage = j.value("stage", d.stage);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.lambda = j.value("lambda", d.lambda);
  c.tau = j.value("tau", d.tau);
  c.grl_schedule = parse_grl_schedule(j.value("grl_schedule", to_string(d.grl_schedule)));
  c.grl_coeff_max = j.value("grl_coeff_max", d.grl_coeff_max);
  c.seed = j.value("seed", d.seed);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.classifier_refine_steps = j.value("classifier_refine_steps", d.classifier_refine_steps);
  c.classifier_lr_multiplier = j.value("classifier_lr_multiplier", d.classifier_lr_multiplier);
  c.grad_clip_norm = j.value("grad_clip_norm", d.grad_clip_norm);
  c.holdout_fraction = j.value("holdout_fraction", d.holdout_fraction);
  c.probe_seed = j.value("probe_seed", d.probe_seed);
}

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  j = {{"epoch", r.epoch},
       {"l_con", r.l_con},
       {"l_dom", r.l_dom},
       {"l_total", r.l_total},
       {"domain_train_acc", r.domain_train_acc},
       {"domain_probe_acc", r.domain_probe_acc ? nlohmann::json(*r.domain_probe_acc) : nlohmann::json()},
       {"wall_time_s", r.wall_time_s}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  r.epoch = j.at("epoch").get<std::int64_t>();
  r.l_con = j.at("l_con").get<double>();
  r.l_dom = j.at("l_dom").get<double>();
  r.l_total = j.at("l_total").get<double>();
  r.domain_train_acc = j.at("domain_train_acc").get<double>();
  if (j.contains("domain_probe_acc") && !j["domain_probe_acc"].is_null())
    r.domain_probe_acc = j["domain_probe_acc"].get<double>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
}

void to_json(nlohmann::json& j, const StepRecord& r) {
  j = {{"epoch", r.epoch}, {"step", r.step},   {"coeff", r.coeff},
       {"l_con", r.l_con}, {"l_dom", r.l_dom}, {"l_total", r.l_total}};
}

bool deterministic_mode() {
  const char* v = std::getenv("INVENC_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

void configure_backend(bool deterministic) {
  if (!deterministic) return;
  at::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);
}

double grl_coefficient(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (step < 0 || (total_steps > 0 && step > total_steps))
    throw InvalidArgument("grl_coefficient: step outside [0, total_steps]");
  if (cfg.grl_schedule == GrlSchedule::constant) return cfg.grl_coeff_max;
  const double p = total_steps > 0 ? static_cast<double>(step) / static_cast<double>(total_steps) : 1.0;
  return cfg.grl_coeff_max * (2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0);
}

void seed_init(std::uint64_t seed, std::uint64_t role) {
  torch::manual_seed(mix_keys({seed, role}) >> 1);
}

std::shared_ptr<model::Encoder> make_encoder(const model::EncoderSpec& spec, std::uint64_t seed) {
  seed_init(seed, kRoleEncoder);
  return std::make_shared<model::Encoder>(spec);
}

nlohmann::json default_config_json(const Stage1Options& opts) {
  return {{"train", opts.train},
          {"encoder", opts.encoder},
          {"classifier", {{"hidden_dim", opts.classifier_hidden_dim}}},
          {"preprocessing", opts.preprocessing}};
}

nlohmann::json default_config_json(const Stage2Options& opts) {
  return {{"train", opts.train},
          {"encoder", opts.encoder},
          {"projection", opts.projection},
          {"classifier",
           {{"hidden_dim", opts.classifier_hidden_dim}, {"attach_point", model::to_string(opts.attach_point)}}},
          {"augmentation", opts.augmentation}};
}

Stage1Report train_stage1(const Stage1Options& opts, const data::Dataset& dataset) {
  const TrainConfig& cfg = opts.train;
  cfg.validate();
  if (cfg.stage != 1) throw InvalidArgument("train_stage1 needs train.stage = 1");
  if (!opts.encoder.frozen) throw InvalidArgument("stage 1 requires a frozen encoder");
  dataset.validate();
  if (dataset.num_domains() < 2) throw InvalidArgument("stage 1 needs at least 2 domains, dataset has 1");
  const auto t0 = Clock::now();
  const bool det = deterministic_mode();

  Stage1Report report;
  auto encoder = make_encoder(opts.encoder, cfg.seed);
  report.backbone_checksum_before = model::parameter_checksum(encoder->state());

  const auto table =
      eval::embed_with(*encoder, nullptr, opts.preprocessing, dataset, model::AttachPoint::backbone_features);
  const auto features = table.vectors.to(torch::kFloat32);
  const auto labels = torch::tensor(dataset.domain_labels, torch::kLong);
  const auto [train_idx, hold_idx] = data::stratified_split(dataset.domain_labels, 1.0 - cfg.holdout_fraction, cfg.seed);
  const auto tr = torch::tensor(train_idx, torch::kLong), ho = torch::tensor(hold_idx, torch::kLong);
  const auto x_tr = features.index_select(0, tr), y_tr = labels.index_select(0, tr);
  const auto x_ho = features.index_select(0, ho), y_ho = labels.index_select(0, ho);

  model::DomainClassifierSpec cspec{opts.encoder.feature_dim, opts.classifier_hidden_dim, dataset.num_domains()};
  seed_init(cfg.seed, kRoleClassifier);
  model::DomainClassifier classifier(cspec);
  torch::optim::Adam opt(classifier->parameters(),
                         torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));

  auto evaluate = [&](const torch::Tensor& x, const torch::Tensor& y) {
    torch::NoGradGuard guard;
    classifier->train(false);
    return accuracy(classifier->forward(x), y);
  };

  fs::path metrics_path;
  if (!opts.output_dir.empty()) {
    fs::create_directories(opts.output_dir);
    metrics_path = opts.output_dir / "metrics.jsonl";
    std::ofstream(metrics_path, std::ios::trunc);
  }

  const auto n_train = static_cast<std::int64_t>(train_idx.size());
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    classifier->train(true);
    const auto order = permutation(n_train, mix_keys({cfg.seed, kStreamStage1, static_cast<std::uint64_t>(epoch)}));
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    for (std::int64_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::int64_t end = std::min(n_train, start + cfg.batch_size);
      if (end - start < 2) continue;  // batch norm needs two rows
      const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + start, order.begin() + end), torch::kLong);
      const auto logits = classifier->forward(x_tr.index_select(0, idx));
      const auto y = y_tr.index_select(0, idx);
      const auto loss = losses::domain_loss(logits, {to_vector(y), dataset.num_domains()});
      check_finite(loss, "L_dom (stage-1 classifier loss)", epoch, start / cfg.batch_size);
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>() * static_cast<double>(end - start);
      seen += end - start;
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.l_dom = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.l_total = rec.l_dom;
    rec.domain_train_acc = evaluate(x_tr, y_tr);
    rec.domain_probe_acc = evaluate(x_ho, y_ho);
    rec.wall_time_s = det ? 0.0 : seconds_since(t0);
    report.curve.push_back(rec);
    if (!metrics_path.empty()) append_jsonl(metrics_path, rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  report.train_acc = evaluate(x_tr, y_tr);
  report.holdout_acc = evaluate(x_ho, y_ho);
  report.backbone_checksum_after = model::parameter_checksum(encoder->state());

  CheckpointBundle& b = report.bundle;
  b.stage = 1;
  b.encoder_spec = opts.encoder;
  b.classifier_spec = cspec;
  b.attach_point = model::AttachPoint::backbone_features;
  b.augmentation = opts.preprocessing;
  b.encoder = encoder;
  b.classifier = classifier;
  b.config = opts.config.is_null() ? default_config_json(opts) : opts.config;
  b.fingerprint = config_fingerprint(b.config);
  b.epoch = cfg.epochs;
  b.seed = cfg.seed;
  if (!opts.output_dir.empty()) save_checkpoint(b, opts.output_dir / "checkpoints" / "final.pt");
  report.wall_time_s = seconds_since(t0);
  return report;
}

Stage2Report train_stage2(const Stage2Options& opts, const data::Dataset& dataset) {
  const TrainConfig& cfg = opts.train;
  cfg.validate();
  if (cfg.stage != 2) throw InvalidArgument("train_stage2 needs train.stage = 2");
  opts.augmentation.validate();
  dataset.validate();
  if (dataset.num_domains() < 2) throw InvalidArgument("stage 2 needs at least 2 domains, dataset has 1");
  const auto t0 = Clock::now();
  const bool det = deterministic_mode();
  const std::int64_t G = dataset.num_domains();

  const nlohmann::json config = opts.config.is_null() ? default_config_json(opts) : opts.config;
  const std::string fingerprint = config_fingerprint(config);
  if (opts.resume && opts.resume->fingerprint != fingerprint)
    throw RuntimeFailure("refusing to resume: checkpoint fingerprint " + opts.resume->fingerprint +
                         " differs from the current config " + fingerprint);

  model::EncoderSpec espec = opts.encoder;
  espec.frozen = false;
  auto encoder = make_encoder(espec, cfg.seed);
  if (opts.init && !opts.resume) {
    const auto& ispec = opts.init->encoder_spec;
    if (ispec.kind != espec.kind || ispec.feature_dim != espec.feature_dim || ispec.in_channels != espec.in_channels)
      throw InvalidArgument("init checkpoint encoder spec does not match the configured encoder");
    encoder->load_state(opts.init->encoder->state());
  }
  seed_init(cfg.seed, kRoleProjection);
  model::ProjectionHead projection(espec.feature_dim, opts.projection);
  const bool on_z = opts.attach_point == model::AttachPoint::projection_output;
  model::DomainClassifierSpec cspec{on_z ? opts.projection.output_dim : espec.feature_dim, opts.classifier_hidden_dim, G};
  seed_init(cfg.seed, kRoleClassifier);
  model::DomainClassifier classifier(cspec);

  std::vector<torch::Tensor> main_params = encoder->parameters();
  for (auto& p : projection->parameters()) main_params.push_back(p);
  torch::optim::Adam opt_main(main_params, torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  torch::optim::Adam opt_cls(classifier->parameters(),
                             torch::optim::AdamOptions(cfg.learning_rate * cfg.classifier_lr_multiplier)
                                 .weight_decay(cfg.weight_decay));

  std::int64_t start_epoch = 0, step = 0;
  if (opts.resume) {
    const auto& r = *opts.resume;
    if (!r.projection) throw RuntimeFailure("resume checkpoint has no projection head (stage-1 checkpoint?)");
    encoder->load_state(r.encoder->state());
    model::load_module_state(*projection, model::module_state(*r.projection));
    model::load_module_state(*classifier, model::module_state(*r.classifier));
    load_optimizer(opt_main, r.optimizer_main);
    load_optimizer(opt_cls, r.optimizer_classifier);
    start_epoch = r.epoch;
    step = r.step;
  }

  Stage2Report report;
  CheckpointBundle& b = report.final;
  b.stage = 2;
  b.encoder_spec = espec;
  b.projection_spec = opts.projection;
  b.classifier_spec = cspec;
  b.attach_point = opts.attach_point;
  b.augmentation = opts.augmentation;
  b.encoder = encoder;
  b.projection = projection;
  b.classifier = classifier;
  b.config = config;
  b.fingerprint = fingerprint;
  b.seed = cfg.seed;
  b.epoch = start_epoch;
  b.step = step;

  fs::path metrics_path, steps_path, ckpt_dir;
  if (!opts.output_dir.empty()) {
    fs::create_directories(opts.output_dir);
    metrics_path = opts.output_dir / "metrics.jsonl";
    steps_path = opts.output_dir / "steps.jsonl";
    ckpt_dir = opts.output_dir / "checkpoints";
    std::vector<MetricsRecord> kept;
    if (opts.resume && fs::exists(metrics_path))
      for (auto& r : read_jsonl(metrics_path))
        if (r.epoch <= start_epoch) kept.push_back(r);
    write_jsonl(metrics_path, kept);
    report.metrics = kept;
    if (!opts.resume || !fs::exists(steps_path)) std::ofstream(steps_path, std::ios::trunc);
  }

  const std::int64_t m = dataset.size();
  if (cfg.batch_size > m)
    throw InvalidArgument("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " + std::to_string(m));
  const std::int64_t steps_per_epoch = m / cfg.batch_size;
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;
  const losses::ContrastiveConfig ccfg{cfg.tau};

  for (std::int64_t epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    encoder->train(true);
    projection->train(true);
    classifier->train(true);
    const auto batches = data::make_batches(dataset, cfg.batch_size,
                                            mix_keys({cfg.seed, kStreamEpoch, static_cast<std::uint64_t>(epoch)}), true);
    double sum_con = 0.0, sum_dom = 0.0, sum_total = 0.0, sum_acc = 0.0;
    for (const auto& batch : batches) {
      std::vector<torch::Tensor> va, vb;
      for (auto idx : batch.indices) {
        const auto key = mix_keys({cfg.seed, kStreamView, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(idx)});
        auto [a, v] = data::augment_views(dataset.record(idx), opts.augmentation, key);
        va.push_back(a);
        vb.push_back(v);
      }
      for (auto& v : vb) va.push_back(v);
      const auto x = torch::stack(va);
      const auto labels2 = torch::cat({batch.domain_labels, batch.domain_labels});
      const losses::DomainLabels dl{to_vector(labels2), G};

      const auto h = model::encode(*encoder, x);
      const auto z = model::project(projection, h);
      const auto& attached = on_z ? z : h;
      const double coeff = grl_coefficient(step, total_steps, cfg);

      if (cfg.classifier_refine_steps > 0) {
        const auto frozen_input = attached.detach();
        for (std::int64_t r = 0; r < cfg.classifier_refine_steps; ++r) {
          opt_cls.zero_grad();
          losses::domain_loss(classifier->forward(frozen_input), dl).backward();
          opt_cls.step();
        }
      }

      const auto logits = model::classify_domain(classifier, losses::grl_apply(attached, coeff));
      const auto l_dom = losses::domain_loss(logits, dl);
      check_finite(l_dom, "L_dom (adversarial domain term)", epoch, step);
      check_finite(z.sum(), "L_con (contrastive term)", epoch, step);
      const auto l_con = losses::ntxent_batch_loss(losses::EmbeddingBatch::from_views(z), ccfg);
      check_finite(l_con, "L_con (contrastive term)", epoch, step);
      const auto loss = losses::total_loss(l_con, l_dom, cfg.lambda);

      opt_main.zero_grad();
      opt_cls.zero_grad();
      loss.backward();
      if (cfg.grad_clip_norm > 0.0) {
        auto all = main_params;
        for (auto& p : classifier->parameters()) all.push_back(p);
        torch::nn::utils::clip_grad_norm_(all, cfg.grad_clip_norm);
      }
      opt_main.step();
      opt_cls.step();

      StepRecord sr;
      sr.epoch = epoch;
      sr.step = step;
      sr.coeff = coeff;
      sr.l_con = l_con.item<double>();
      sr.l_dom = l_dom.item<double>();
      sr.l_total = loss.item<double>();  // the objective that was backpropagated
      sum_con += sr.l_con;
      sum_dom += sr.l_dom;
      sum_total += sr.l_total;
      sum_acc += accuracy(logits.detach(), labels2);
      if (opts.record_steps) report.steps.push_back(sr);
      if (!steps_path.empty()) append_jsonl(steps_path, sr);
      ++step;
    }
    const double nb = static_cast<double>(batches.size());
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.l_con = sum_con / nb;
    rec.l_dom = sum_dom / nb;
    rec.l_total = sum_total / nb;
    rec.domain_train_acc = sum_acc / nb;
    const bool probe_now = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
    if (probe_now) {
      const auto table = eval::embed_with(*encoder, &projection, opts.augmentation, dataset, opts.attach_point);
      rec.domain_probe_acc = eval::domain_probe_accuracy(table, cfg.probe_seed);
    }
    rec.wall_time_s = det ? 0.0 : seconds_since(t0);
    report.metrics.push_back(rec);
    if (!metrics_path.empty()) append_jsonl(metrics_path, rec);

    b.epoch = epoch;
    b.step = step;
    if (!ckpt_dir.empty()) {
      b.optimizer_main = save_optimizer(opt_main);
      b.optimizer_classifier = save_optimizer(opt_cls);
      save_checkpoint(b, ckpt_dir / "last.pt");
    }
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  b.optimizer_main = save_optimizer(opt_main);
  b.optimizer_classifier = save_optimizer(opt_cls);
  if (!ckpt_dir.empty()) save_checkpoint(b, ckpt_dir / "final.pt");
  encoder->train(false);
  projection->train(false);
  classifier->train(false);
  report.wall_time_s = seconds_since(t0);
  return report;
}

}  // namespace invenc::train
