#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "flowplan/checkpoint.hpp"
#include "flowplan/errors.hpp"
#include "flowplan/toy.hpp"

using namespace flowplan;

namespace {

Checkpoint trained() {
  const auto data = toy::make_toy({.dialogues = 4});
  auto cfg = fixtures::toy_config();
  cfg.epochs = 2;
  Checkpoint ck;
  ck.state = train(data.corpus, data.chart_map(), cfg);
  ck.charts = data.charts;
  ck.corpus_size = data.corpus.size();
  return ck;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves every field") {
  const Checkpoint ck = trained();
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.hash() == ck.hash());
  CHECK(back.state.epoch == ck.state.epoch);
  CHECK(back.state.rng_state == ck.state.rng_state);
  CHECK(back.state.optimizer.step == ck.state.optimizer.step);
  CHECK(back.state.optimizer.m == ck.state.optimizer.m);
  CHECK(back.state.reports.size() == ck.state.reports.size());
  CHECK(back.state.reports.back().total == ck.state.reports.back().total);
  CHECK(back.corpus_size == 4);
  REQUIRE(back.charts.size() == 1);
  CHECK(back.charts[0].id() == "printer");
  CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bytes = serialize_checkpoint(trained());
  CHECK_THROWS_AS(deserialize_checkpoint("NOT-A-CHECKPOINT"), ValidationError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), ValidationError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), ValidationError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 30)), ValidationError);
}

TEST_CASE("atomic file writes") {
  const auto dir = fixtures::temp_dir("ckpt");
  const auto path = (dir / "model.ckpt").string();
  const Checkpoint ck = trained();
  save_checkpoint(ck, path);
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  CHECK(load_checkpoint(path).hash() == ck.hash());
  CHECK_THROWS_AS(load_checkpoint((dir / "missing").string()), ValidationError);
  CHECK(to_hex(255) == "00000000000000ff");
}
