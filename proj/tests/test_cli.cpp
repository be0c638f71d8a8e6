// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "testing.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(INVENC_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// A tiny but complete configuration so each CLI run takes a second or two.
fs::path workspace() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "invenc_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "tiny.toml") << R"(run_name = "tiny"
[synthetic]
num_domains = 4
num_content_classes = 3
images_per_domain = 12
image_size = 32
seed = 5
[augmentation]
input_size = 32
[encoder]
feature_dim = 32
[projection]
hidden_dim = 32
output_dim = 16
[classifier]
hidden_dim = 16
[stage1]
epochs = 2
batch_size = 8
[stage2]
epochs = 2
batch_size = 8
classifier_refine_steps = 1
seed = 5
[evaluation]
knn_k = 5
)";
    return d;
  }();
  return dir;
}

std::string base(const std::string& run_name) {
  const auto w = workspace();
  return "--config " + (w / "tiny.toml").string() + " --out-dir " + (w / "out").string() + " --run-name " + run_name;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run("").code == 1);
  CHECK(run("fly").code == 1);
  CHECK(run("train-stage2 --epochs").code == 1);
  const auto bad_key = run("train-stage2 --set stage2.lambada=1");
  CHECK(bad_key.code == 1);
  CHECK(bad_key.output.find("stage2.lambada") != std::string::npos);
  CHECK(run("train-stage2 --config /nonexistent/x.toml").code == 1);
  CHECK(run("train-stage2 " + base("neg") + " --lambda -1").code == 1);
  CHECK(run("--help").code == 0);
}

TEST_CASE("runtime failures exit 2 and name the path") {
  const auto missing = run("synth " + base("m") + " --out /nonexistent_parent_dir/ds");
  CHECK(missing.code == 2);
  CHECK(missing.output.find("/nonexistent_parent_dir") != std::string::npos);
  const auto ckpt = run("evaluate --checkpoint /nonexistent/final.pt");
  CHECK(ckpt.code == 2);
  CHECK(ckpt.output.find("/nonexistent/final.pt") != std::string::npos);
}

TEST_CASE("synth is deterministic and writes a loadable dataset") {
  const auto w = workspace();
  REQUIRE(run("synth " + base("s") + " --out " + (w / "ds_a").string()).code == 0);
  REQUIRE(run("synth " + base("s") + " --out " + (w / "ds_b").string()).code == 0);
  REQUIRE(run("synth " + base("s") + " --out " + (w / "ds_c").string() + " --seed 6").code == 0);
  CHECK(fs::exists(w / "ds_a" / "manifest.json"));
  CHECK(fs::exists(w / "ds_a" / "resolved_config.json"));
  std::size_t files = 0, same = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(w / "ds_a")) {
    if (e.path().extension() != ".png") continue;
    ++files;
    const auto rel = fs::relative(e.path(), w / "ds_a");
    same += slurp(e.path()) == slurp(w / "ds_b" / rel);
    differ += slurp(e.path()) != slurp(w / "ds_c" / rel);
  }
  CHECK(files == 48);
  CHECK(same == 48);
  CHECK(differ == 48);
}

TEST_CASE("stage 1 with zero epochs reports chance and a frozen backbone") {
  const auto w = workspace();
  const auto r = run("train-stage1 " + base("s1zero") + " --epochs 0");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto rep = read_json(w / "out" / "s1zero" / "report.json");
  CHECK(rep["holdout_domain_acc"].get<double>() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(rep["backbone_frozen"].get<bool>());
  CHECK(fs::exists(w / "out" / "s1zero" / "resolved_config.json"));
  CHECK(fs::exists(w / "out" / "s1zero" / "checkpoints" / "final.pt"));
}

TEST_CASE("flags override the config file and are recorded") {
  const auto w = workspace();
  const auto r = run("train-stage2 " + base("lam0") + " --lambda 0 --epochs 1 --set stage2.tau=0.3");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto resolved = read_json(w / "out" / "lam0" / "resolved_config.json");
  CHECK(resolved["config"]["stage2"]["lambda"].get<double>() == 0.0);
  CHECK(resolved["config"]["stage2"]["epochs"].get<int>() == 1);
  CHECK(resolved["config"]["stage2"]["tau"].get<double>() == 0.3);
  CHECK(resolved["config"]["synthetic"]["images_per_domain"].get<int>() == 12);
  const auto rep = read_json(w / "out" / "lam0" / "report.json");
  CHECK(rep["lambda"].get<double>() == 0.0);
  CHECK(rep["fingerprint"] == resolved["fingerprint"]);
  // The recorded config reproduces the fingerprint.
  const auto again = run("train-stage2 --config " + (w / "out" / "lam0" / "resolved_config.json").string() +
                         " --out-dir " + (w / "out").string() + " --run-name lam0_again");
  REQUIRE_MESSAGE(again.code == 0, again.output);
  CHECK(read_json(w / "out" / "lam0_again" / "resolved_config.json")["fingerprint"] == resolved["fingerprint"]);
}

TEST_CASE("train, evaluate, plot and resume end to end") {
  const auto w = workspace();
  const auto run_dir = w / "out" / "e2e";
  const auto t = run("train-stage2 " + base("e2e"));
  REQUIRE_MESSAGE(t.code == 0, t.output);
  CHECK(line_count(run_dir / "metrics.jsonl") == 2);
  CHECK(line_count(run_dir / "steps.jsonl") == 12);
  CHECK(line_count(run_dir / "embeddings.csv") == 49);
  const auto ckpt = run_dir / "checkpoints" / "final.pt";
  REQUIRE(fs::exists(ckpt));

  const auto e = run("evaluate --checkpoint " + ckpt.string() + " --out " + (w / "eval").string());
  REQUIRE_MESSAGE(e.code == 0, e.output);
  CHECK(line_count(w / "eval" / "embeddings.csv") == 49);
  const auto rep = read_json(w / "eval" / "report.json");
  CHECK(rep["num_embeddings"].get<int>() == 48);
  CHECK(rep.contains("domain_probe_acc"));
  CHECK(rep.contains("knn_domain_purity"));
  CHECK(rep["checkpoint_fingerprint"] == rep["fingerprint"]);
  CHECK(fs::exists(w / "eval" / "resolved_config.json"));
  // Evaluating the same checkpoint again is byte-identical.
  REQUIRE(run("evaluate --checkpoint " + ckpt.string() + " --out " + (w / "eval2").string()).code == 0);
  CHECK(slurp(w / "eval" / "embeddings.csv") == slurp(w / "eval2" / "embeddings.csv"));

  const auto p = run("plot " + base("e2e") + " --embeddings " + (run_dir / "embeddings.csv").string());
  REQUIRE_MESSAGE(p.code == 0, p.output);
  CHECK(fs::exists(run_dir / "plots" / "scatter_pca.png"));
  CHECK(line_count(run_dir / "plots" / "scatter_pca.csv") == 49);
  const auto pt = run("plot " + base("e2e") + " --checkpoint " + ckpt.string() +
                      " --method tsne --plot-seed 3 --set evaluation.tsne_iterations=300 --set evaluation.tsne_perplexity=5");
  REQUIRE_MESSAGE(pt.code == 0, pt.output);
  CHECK(line_count(run_dir / "plots" / "scatter_tsne.csv") == 49);
  CHECK(run("plot " + base("e2e")).code == 1);

  // Resume from the final checkpoint with more epochs is a different config.
  const auto wrong = run("train-stage2 " + base("e2e") + " --epochs 3 --resume " + ckpt.string());
  CHECK(wrong.code == 2);
  CHECK(wrong.output.find("fingerprint") != std::string::npos);
  // Resume from the epoch-2 checkpoint of the same config: nothing left to do,
  // the metrics are kept.
  const auto before = slurp(run_dir / "metrics.jsonl");
  const auto same = run("train-stage2 " + base("e2e") + " --resume " + (run_dir / "checkpoints" / "last.pt").string());
  REQUIRE_MESSAGE(same.code == 0, same.output);
  CHECK(slurp(run_dir / "metrics.jsonl") == before);
}
