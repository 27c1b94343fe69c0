#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "flowplan/errors.hpp"
#include "flowplan/toy.hpp"
#include "flowplan/training.hpp"

using namespace flowplan;

TEST_CASE("config JSON round trip and validation") {
  TrainConfig c = fixtures::toy_config();
  c.kl_free_bits = 0.25;
  c.free_bits_per_dimension = true;
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(back) == train_config_to_json(c));
  CHECK(back.backbone.d_model == 32);
  CHECK(train_config_from_json(R"({"epochs": 3})").epochs == 3);
  CHECK_THROWS_AS(train_config_from_json(R"({"epochz": 3})"), ValidationError);
  CHECK_THROWS_AS(train_config_from_json(R"({"backbone": {"layers": 3}})"), ValidationError);
  CHECK_THROWS_AS(train_config_from_json(R"({"learning_rate": -1})").validate(), ValidationError);
  TrainConfig bad = c;
  bad.backbone.heads = 5;  // 32 is not divisible by 5
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(c.model_config().backbone.max_len == c.max_utterance_len);
}

TEST_CASE("free bits") {
  CHECK(apply_free_bits(0.05, 0.1) == 0.1);
  CHECK(apply_free_bits(0.3, 0.1) == 0.3);
  CHECK(apply_free_bits(0.1, 0.1) == 0.1);
  const auto terms = ag::Tensor::parameter(1, 3, {0.01, 0.02, 0.5});
  CHECK(apply_free_bits(terms, 0.1, false).item() == doctest::Approx(0.53));
  CHECK(apply_free_bits(terms, 0.1, true).item() == doctest::Approx(0.7));
  CHECK(apply_free_bits(terms, 1.0, false).item() == 1.0);
}

TEST_CASE("items mirror the dialogue structure") {
  const auto data = toy::make_toy({.dialogues = 4});
  const auto cfg = fixtures::toy_config();
  const Model m(cfg.model_config(), build_vocabulary(data.corpus, data.chart_map(), cfg.vocab_max));
  const auto& d = data.corpus.dialogues[3];
  const auto items = build_items(m, d, data.chart_map().at(d.flowchart_id));
  REQUIRE(items.size() == d.sub_dialogues.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(items[i].node_index == i);
    CHECK(items[i].acts.size() == d.sub_dialogues[i].utterances.size());
    CHECK(items[i].utterances.size() == items[i].acts.size());
    CHECK(items[i].turn.front() == Vocabulary::kBos);
  }
}

TEST_CASE("gradient clipping") {
  nn::ParamStore store;
  std::mt19937_64 rng(1);
  auto w = store.create("w", 1, 2, nn::Init::zeros, rng);
  ag::backward(ag::sum(ag::scale(w, 1.0) * ag::Tensor::constant(1, 2, {3.0, 4.0})));
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(w.grad()[0] == doctest::Approx(0.6));
  CHECK(w.grad()[1] == doctest::Approx(0.8));
}

TEST_CASE("AdamW first step moves each weight by about the learning rate") {
  nn::ParamStore store;
  std::mt19937_64 rng(1);
  auto w = store.create("w", 1, 2, nn::Init::ones, rng);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, store);
  ag::backward(ag::sum(w * ag::Tensor::constant(1, 2, {2.0, -0.5})));
  opt.step(store);
  CHECK(w.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(w.value()[1] == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(opt.state().step == 1);
}

TEST_CASE("short training is deterministic and reduces the loss") {
  const auto data = toy::make_toy();
  auto cfg = fixtures::toy_config();
  cfg.epochs = 6;
  const TrainState a = train(data.corpus, data.chart_map(), cfg);
  const TrainState b = train(data.corpus, data.chart_map(), cfg);
  REQUIRE(a.reports.size() == 6);
  CHECK(a.reports.back().total < a.reports.front().total);
  for (std::size_t e = 0; e < a.reports.size(); ++e) CHECK(a.reports[e].total == b.reports[e].total);
  CHECK(a.model->fingerprint() == b.model->fingerprint());
  cfg.seed = 2;
  CHECK(train(data.corpus, data.chart_map(), cfg).model->fingerprint() != a.model->fingerprint());
}

TEST_CASE("training rejects empty input") {
  const auto data = toy::make_toy();
  CHECK_THROWS(train(Corpus{}, data.chart_map(), fixtures::toy_config()));
}

TEST_CASE("likelihood estimates") {
  CHECK(log_mean_exp({std::log(1.0), std::log(3.0)}) == doctest::Approx(std::log(2.0)));
  CHECK(log_mean_exp({-1000.0, -1000.0}) == doctest::Approx(-1000.0));

  const auto data = toy::make_toy({.dialogues = 4});
  auto cfg = fixtures::toy_config();
  cfg.epochs = 3;
  const TrainState st = train(data.corpus, data.chart_map(), cfg);
  const auto& d = data.corpus.dialogues[0];
  const auto items = build_items(*st.model, d, data.chart_map().at(d.flowchart_id));
  std::mt19937_64 rng(3);
  const auto est = estimate_log_likelihood(*st.model, items, 64, rng);
  CHECK(est.log_weights.size() == 64);
  CHECK(std::isfinite(est.log_likelihood));
  CHECK(est.standard_error >= 0);
  CHECK(est.log_likelihood < 0);
  double mean_elbo = 0;
  for (int k = 0; k < 32; ++k) mean_elbo += elbo_sample(*st.model, items, rng) / 32;
  CHECK(mean_elbo <= est.log_likelihood + 1e-9);
}
