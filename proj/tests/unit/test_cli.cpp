#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "flowplan/checkpoint.hpp"
#include "flowplan/cli.hpp"
#include "flowplan/training.hpp"

using flowplan::cli::run;
namespace fs = std::filesystem;

namespace {

int call(std::vector<std::string> args) {
  args.insert(args.begin(), "flowplan");
  return run(args);
}

std::string slurp(const fs::path& p) { return flowplan::read_file(p.string()); }

}  // namespace

TEST_CASE("pipeline through the command line") {
  const auto dir = fixtures::temp_dir("cli");
  const std::string toy = (dir / "toy").string();
  const std::string charts = toy + "/flowcharts";
  const std::string corpus = toy + "/dialogues.jsonl";
  REQUIRE(call({"make-toy", "--out", toy, "--seed", "3"}) == 0);

  REQUIRE(call({"paths", "--flowcharts", charts, "--out", (dir / "paths.txt").string()}) == 0);
  CHECK(slurp(dir / "paths.txt") == "q0|no>a0\nq0|yes>q1|no>a1\nq0|yes>q1|yes>q2|no>a3\nq0|yes>q1|yes>q2|yes>a2\n");
  REQUIRE(call({"paths", "--flowchart", charts + "/printer.json", "--out", (dir / "paths2.txt").string()}) == 0);
  CHECK(slurp(dir / "paths2.txt") == slurp(dir / "paths.txt"));

  REQUIRE(call({"coverage", "--flowcharts", charts, "--corpus", corpus, "--out", (dir / "cov.json").string()}) == 0);
  CHECK(slurp(dir / "cov.json").find("\"uncovered_fraction\": 0.0") != std::string::npos);

  flowplan::TrainConfig cfg = fixtures::toy_config();
  cfg.epochs = 2;
  std::ofstream(dir / "cfg.json") << flowplan::train_config_to_json(cfg);
  const std::string ck = (dir / "model.ckpt").string();
  REQUIRE(call({"train", "--flowcharts", charts, "--corpus", corpus, "--config", (dir / "cfg.json").string(),
                "--out", ck, "--metrics-log", (dir / "log.jsonl").string(), "--seed", "4"}) == 0);
  CHECK(fs::exists(ck));
  CHECK(std::count(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(dir / "log.jsonl")),
                   std::istreambuf_iterator<char>(), '\n') == 2);

  const std::string syn1 = (dir / "syn1.jsonl").string(), syn2 = (dir / "syn2.jsonl").string();
  REQUIRE(call({"generate", "--checkpoint", ck, "--factor", "2", "--seed", "8", "--out", syn1}) == 0);
  REQUIRE(call({"generate", "--checkpoint", ck, "--factor", "2", "--seed", "8", "--out", syn2,
                "--flowcharts", charts}) == 0);
  CHECK(slurp(syn1) == slurp(syn2));
  CHECK(fs::exists(syn1 + ".manifest.json"));

  REQUIRE(call({"evaluate", "--flowcharts", charts, "--candidates", syn1, "--references", corpus,
                "--granularity", "utterance", "--out", (dir / "eval.jsonl").string()}) == 0);
  CHECK(slurp(dir / "eval.jsonl").find("\"rouge_l\"") != std::string::npos);
  CHECK(call({"inspect", "--checkpoint", ck}) == 0);
  CHECK(call({"inspect", "--flowcharts", charts, "--corpus", corpus}) == 0);

  REQUIRE(call({"train", "--flowcharts", charts, "--corpus", corpus, "--config", (dir / "cfg.json").string(),
                "--out", (dir / "split.ckpt").string(), "--split-uncovered", "0.5"}) == 0);
  CHECK(flowplan::load_checkpoint((dir / "split.ckpt").string()).corpus_size < 20);
}

TEST_CASE("exit codes") {
  const auto dir = fixtures::temp_dir("cli-codes");
  const std::string toy = (dir / "toy").string();
  REQUIRE(call({"make-toy", "--out", toy}) == 0);
  const std::string charts = toy + "/flowcharts";

  CHECK(call({}) == 1);
  CHECK(call({"paths", "--bogus"}) == 1);
  CHECK(call({"frobnicate"}) == 1);
  CHECK(call({"paths", "--flowchart", (dir / "missing.json").string()}) == 1);
  CHECK(call({"paths"}) == 1);
  CHECK(call({"--help"}) == 0);

  std::ofstream(dir / "bad.json") << R"({"id":"c","root":"q","nodes":[{"id":"q","kind":"decision","text":"t"}],"edges":[]})";
  CHECK(call({"paths", "--flowchart", (dir / "bad.json").string()}) == 1);

  std::ofstream(dir / "bad.jsonl") << "{\"id\": 1}\n";
  CHECK(call({"coverage", "--flowcharts", charts, "--corpus", (dir / "bad.jsonl").string()}) == 1);
  std::ofstream(dir / "junk.ckpt") << "junk";
  CHECK(call({"generate", "--checkpoint", (dir / "junk.ckpt").string()}) == 1);
  std::ofstream(dir / "cfg.json") << R"({"epochs": 1, "unknown_key": 2})";
  CHECK(call({"train", "--flowcharts", charts, "--corpus", toy + "/dialogues.jsonl", "--config",
              (dir / "cfg.json").string(), "--out", (dir / "m.ckpt").string()}) == 1);

  // An unwritable destination is a runtime failure, not a validation error.
  CHECK(call({"paths", "--flowcharts", charts, "--out", (dir / "no" / "such" / "dir" / "p.txt").string()}) == 2);
}
