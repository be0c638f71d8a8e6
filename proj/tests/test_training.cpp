// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "testing.hpp"
#include "invenc/checkpoint.hpp"
#include "invenc/error.hpp"
#include "invenc/evaluation.hpp"
#include "invenc/losses.hpp"
#include "invenc/training.hpp"
#include "json.hpp"

using namespace invenc;
using namespace invenc::train;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("invenc_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<nlohmann::json> metrics_without_time(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_time_s");
    out.push_back(j);
  }
  return out;
}

const data::Dataset& tiny_set() {
  static const auto ds = data::generate_synthetic_dataset({4, 3, 12, 32, 11});
  return ds;
}

Stage2Options tiny_stage2(std::int64_t epochs) {
  Stage2Options o;
  o.train.epochs = epochs;
  o.train.batch_size = 8;
  o.train.learning_rate = 1e-3;
  o.train.seed = 3;
  o.train.classifier_refine_steps = 1;
  o.encoder.feature_dim = 32;
  o.projection = {32, 16, true};
  o.classifier_hidden_dim = 16;
  o.augmentation.input_size = 32;
  return o;
}

Stage1Options tiny_stage1(std::int64_t epochs) {
  Stage1Options o;
  o.train.stage = 1;
  o.train.epochs = epochs;
  o.train.batch_size = 8;
  o.train.learning_rate = 1e-2;
  o.train.seed = 3;
  o.encoder.frozen = true;
  o.encoder.feature_dim = 32;
  o.classifier_hidden_dim = 16;
  o.preprocessing.input_size = 32;
  return o;
}

}  // namespace

TEST_CASE("GRL coefficient schedule") {
  TrainConfig c;
  c.grl_coeff_max = 1.0;
  CHECK(grl_coefficient(0, 100, c) == 0.0);
  CHECK(std::abs(grl_coefficient(100, 100, c) - 0.9999092) < 1e-7);
  CHECK(std::abs(grl_coefficient(50, 100, c) - (2.0 / (1.0 + std::exp(-5.0)) - 1.0)) < 1e-15);
  double prev = -1.0;
  for (int s = 0; s <= 100; ++s) {
    const double v = grl_coefficient(s, 100, c);
    CHECK(v >= prev);
    CHECK(v <= 1.0);
    prev = v;
  }
  c.grl_coeff_max = 2.0;
  CHECK(std::abs(grl_coefficient(100, 100, c) - 2 * 0.9999092) < 2e-7);
  c.grl_schedule = GrlSchedule::constant;
  CHECK(grl_coefficient(0, 100, c) == 2.0);
  CHECK(grl_coefficient(37, 100, c) == 2.0);
  CHECK_THROWS_AS(grl_coefficient(101, 100, c), InvalidArgument);
  CHECK_THROWS_AS(parse_grl_schedule("linear"), InvalidArgument);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  auto o = tiny_stage2(1);
  o.train.batch_size = 49;
  CHECK_THROWS_AS(train_stage2(o, tiny_set()), InvalidArgument);
}

TEST_CASE("stage 1 with zero epochs sits at chance") {
  const auto r = train_stage1(tiny_stage1(0), tiny_set());
  CHECK(r.curve.empty());
  CHECK(std::abs(r.holdout_acc - 0.25) < 1e-12);
  CHECK(std::abs(r.train_acc - 0.25) < 1e-12);
}

TEST_CASE("stage 1 trains the classifier and leaves the backbone untouched") {
  const auto dir = temp_dir("stage1");
  auto o = tiny_stage1(15);
  o.output_dir = dir;
  const auto r = train_stage1(o, tiny_set());
  CHECK(r.curve.size() == 15);
  CHECK(r.backbone_checksum_before == r.backbone_checksum_after);
  CHECK(r.train_acc > 0.5);
  CHECK(r.curve.back().l_dom < r.curve.front().l_dom);
  for (const auto& rec : r.curve) {
    CHECK(rec.l_con == 0.0);
    CHECK(rec.l_total == rec.l_dom);
    CHECK(rec.domain_probe_acc.has_value());
  }
  REQUIRE(fs::exists(dir / "checkpoints" / "final.pt"));
  const auto b = load_checkpoint(dir / "checkpoints" / "final.pt");
  CHECK(b.stage == 1);
  CHECK(b.encoder_checksum() == r.backbone_checksum_after);
  CHECK(b.classifier_checksum() == r.bundle.classifier_checksum());
  CHECK_FALSE(b.projection);

  auto unfrozen = tiny_stage1(1);
  unfrozen.encoder.frozen = false;
  CHECK_THROWS_AS(train_stage1(unfrozen, tiny_set()), InvalidArgument);
}

TEST_CASE("short stage-2 run obeys the loss identity and the schedule") {
  configure_backend(true);
  auto o = tiny_stage2(2);
  o.train.lambda = 0.7;
  const auto r = train_stage2(o, tiny_set());
  REQUIRE(r.metrics.size() == 2);
  REQUIRE(r.steps.size() == 12);  // 48 / 8 per epoch
  for (const auto& s : r.steps) {
    CHECK(std::isfinite(s.l_con));
    CHECK(std::isfinite(s.l_dom));
    CHECK(std::abs(s.l_total - (s.l_con + 0.7 * s.l_dom)) <= 1e-6 * std::max(1.0, std::abs(s.l_total)));
    CHECK(s.coeff == grl_coefficient(s.step, 12, o.train));
    CHECK(s.l_con >= 0.0);
  }
  CHECK_FALSE(r.metrics[0].domain_probe_acc.has_value());
  REQUIRE(r.metrics[1].domain_probe_acc.has_value());
  const double probe = *r.metrics[1].domain_probe_acc;
  CHECK(probe >= 0.0);
  CHECK(probe <= 1.0);
  for (const auto& m : r.metrics)
    CHECK(std::abs(m.l_total - (m.l_con + 0.7 * m.l_dom)) <= 1e-6 * std::max(1.0, std::abs(m.l_total)));
}

TEST_CASE("checkpoint round trip and tamper detection") {
  configure_backend(true);
  const auto dir = temp_dir("ckpt");
  auto o = tiny_stage2(1);
  o.output_dir = dir;
  const auto r = train_stage2(o, tiny_set());
  const auto path = dir / "checkpoints" / "final.pt";
  REQUIRE(fs::exists(path));
  REQUIRE(fs::exists(sidecar_path(path)));
  const auto b = load_checkpoint(path);
  CHECK(b.encoder_checksum() == r.final.encoder_checksum());
  CHECK(*b.projection_checksum() == *r.final.projection_checksum());
  CHECK(b.classifier_checksum() == r.final.classifier_checksum());
  CHECK(b.fingerprint == r.final.fingerprint);
  CHECK(b.epoch == 1);
  CHECK(b.step == 6);

  const auto e1 = eval::embed_dataset(r.final, tiny_set(), model::AttachPoint::projection_output);
  const auto e2 = eval::embed_dataset(b, tiny_set(), model::AttachPoint::projection_output);
  CHECK(torch::equal(e1.vectors, e2.vectors));

  // A recorded hyperparameter edited after the fact no longer matches.
  auto side = nlohmann::json::parse(slurp(sidecar_path(path)));
  side["config"]["train"]["lambda"] = 0.25;
  std::ofstream(sidecar_path(path)) << side.dump(2);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("fingerprint"), RuntimeFailure);

  CHECK_THROWS_AS(load_checkpoint(dir / "nope.pt"), RuntimeFailure);
}

TEST_CASE("resume continues from the saved epoch and matches an uninterrupted run") {
  configure_backend(true);
  const auto full_dir = temp_dir("resume_full"), cut_dir = temp_dir("resume_cut");
  auto o = tiny_stage2(2);
  o.output_dir = full_dir;
  const auto full = train_stage2(o, tiny_set());

  auto cut = tiny_stage2(2);
  cut.output_dir = cut_dir;
  cut.on_epoch = [](const MetricsRecord& r) {
    if (r.epoch == 1) throw std::runtime_error("simulated interruption");
  };
  CHECK_THROWS_AS(train_stage2(cut, tiny_set()), std::runtime_error);
  const auto last = load_checkpoint(cut_dir / "checkpoints" / "last.pt");
  CHECK(last.epoch == 1);

  auto resumed = tiny_stage2(2);
  resumed.output_dir = cut_dir;
  resumed.resume = last;
  std::vector<std::int64_t> epochs_seen;
  resumed.on_epoch = [&](const MetricsRecord& r) { epochs_seen.push_back(r.epoch); };
  const auto rest = train_stage2(resumed, tiny_set());
  CHECK(epochs_seen == std::vector<std::int64_t>{2});
  CHECK(rest.steps.front().step == 6);
  CHECK(metrics_without_time(full_dir / "metrics.jsonl") == metrics_without_time(cut_dir / "metrics.jsonl"));
  CHECK(rest.final.encoder_checksum() == full.final.encoder_checksum());

  auto other = tiny_stage2(2);
  other.train.lambda = 0.5;
  other.resume = last;
  CHECK_THROWS_WITH_AS(train_stage2(other, tiny_set()), doctest::Contains("fingerprint"), RuntimeFailure);
}

TEST_CASE("non-finite loss aborts and names the term") {
  auto ds = tiny_set();
  ds.images = ds.images.clone();
  ds.images[0].fill_(std::numeric_limits<float>::quiet_NaN());
  auto o = tiny_stage2(1);
  o.train.batch_size = 48;  // the poisoned image is in the first batch
  CHECK_THROWS_WITH_AS(train_stage2(o, ds), doctest::Contains("non-finite L_"), RuntimeFailure);
}

TEST_CASE("short runs are reproducible") {
  configure_backend(true);
  const auto a = train_stage2(tiny_stage2(1), tiny_set());
  const auto b = train_stage2(tiny_stage2(1), tiny_set());
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].l_con == b.steps[i].l_con);
    CHECK(a.steps[i].l_dom == b.steps[i].l_dom);
  }
  CHECK(a.final.encoder_checksum() == b.final.encoder_checksum());
}

TEST_CASE("encoder steps through the GRL increase the domain loss") {
  // With the classifier held fixed, a small gradient step of the
  // encoder-side parameters on lambda * L_dom routed through the GRL must
  // move uphill on L_dom.
  const auto& ds = tiny_set();
  seed_init(5, kRoleEncoder);
  model::EncoderSpec es;
  es.feature_dim = 32;
  model::Encoder enc(es);
  seed_init(5, kRoleProjection);
  model::ProjectionHead proj(32, model::ProjectionSpec{32, 16, true});
  seed_init(5, kRoleClassifier);
  model::DomainClassifier cls(model::DomainClassifierSpec{16, 16, 4});
  {
    torch::NoGradGuard g;
    for (auto& p : cls->parameters()) p.copy_(torch::randn_like(p) * 0.3);
  }
  enc.train(false);
  proj->train(false);
  cls->train(false);
  std::vector<torch::Tensor> params = enc.parameters();
  for (auto& p : proj->parameters()) params.push_back(p);
  torch::optim::SGD opt(params, torch::optim::SGDOptions(1e-3));

  int uphill = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (const auto& batch : data::make_batches(ds, 8, seed, true)) {
      const losses::DomainLabels dl{std::vector<std::int64_t>(batch.domain_labels.data_ptr<std::int64_t>(),
                                                              batch.domain_labels.data_ptr<std::int64_t>() + 8),
                                    4};
      auto l_dom = [&](bool reversed) {
        auto z = model::project(proj, model::encode(enc, batch.images));
        if (reversed) z = losses::grl_apply(z, 1.0);
        return losses::domain_loss(model::classify_domain(cls, z), dl);
      };
      const auto before = l_dom(true);
      opt.zero_grad();
      before.backward();
      opt.step();
      torch::NoGradGuard g;
      uphill += l_dom(false).item<double>() > before.item<double>();
      ++total;
    }
  }
  CHECK(static_cast<double>(uphill) / total >= 0.8);
}
