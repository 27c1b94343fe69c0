#include <doctest.h>

#include <random>

#include "flowplan/metrics.hpp"
#include "oracles.hpp"

using namespace flowplan;

TEST_CASE("oracles agree with hand-computed values") {
  CHECK(oracle::distinct_n({{"a", "a", "a"}}, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(oracle::distinct_n({{"the", "cat", "sat"}, {"the", "dog", "sat"}}, 2) == 1.0);
  CHECK(oracle::rouge_l({"a", "b", "c"}, {"a", "c"}) ==
        doctest::Approx((1 + 1.44) * (2.0 / 3) * 1.0 / (1.0 + 1.44 * 2.0 / 3)));
  CHECK(oracle::bleu4({"a", "b", "c", "d"}, {{"a", "b", "c", "d"}}) == doctest::Approx(1.0));

  auto chart = Flowchart::build("h", "q",
                                {{"q", NodeKind::decision, "q"},
                                 {"r", NodeKind::decision, "r"},
                                 {"a", NodeKind::action, "a"},
                                 {"b", NodeKind::action, "b"}},
                                {{"q", "r", "yes"}, {"q", "a", "no"}, {"r", "a", "x"}, {"r", "b", "y"}, {"q", "b", "maybe"}});
  const auto keys = oracle::brute_force_paths(chart);
  CHECK(keys == std::vector<std::string>{"q|maybe>b", "q|no>a", "q|yes>r|x>a", "q|yes>r|y>b"});
}

TEST_CASE("enumerate_paths matches brute force on random charts") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    const Flowchart chart = oracle::random_chart(rng);
    std::vector<std::string> got;
    for (const auto& p : enumerate_paths(chart)) got.push_back(p.key());
    const std::size_t raw = got.size();
    std::sort(got.begin(), got.end());
    REQUIRE(std::adjacent_find(got.begin(), got.end()) == got.end());
    CHECK(raw == got.size());
    CHECK(got == oracle::brute_force_paths(chart));
  }
}

TEST_CASE("metrics match naive oracles on random cases") {
  std::mt19937_64 rng(99);
  oracle::Table table;
  metrics::WordVectors wv;
  std::normal_distribution<double> nd;
  for (int w = 0; w < 12; ++w) {  // words w12.. stay out of vocabulary
    std::vector<double> v(5);
    for (auto& x : v) x = nd(rng);
    table["w" + std::to_string(w)] = v;
    wv.add("w" + std::to_string(w), v);
  }
  for (int i = 0; i < 50; ++i) {
    const auto cand = oracle::random_tokens(rng, 1, 12, 15);
    std::vector<oracle::Tokens> refs;
    for (int r = 0; r < 3; ++r) refs.push_back(oracle::random_tokens(rng, 1, 12, 15));
    CHECK(metrics::bleu4(cand, refs) == doctest::Approx(oracle::bleu4(cand, refs)).epsilon(1e-9));
    CHECK(std::abs(metrics::bleu4(cand, refs) - oracle::bleu4(cand, refs)) <= 1e-9);
    CHECK(std::abs(metrics::rouge_l(cand, refs[0]) - oracle::rouge_l(cand, refs[0])) <= 1e-9);
    std::vector<oracle::Tokens> corpus = refs;
    corpus.push_back(cand);
    for (std::size_t n = 1; n <= 3; ++n)
      CHECK(std::abs(metrics::distinct_n(corpus, n) - oracle::distinct_n(corpus, n)) <= 1e-9);
    CHECK(std::abs(metrics::self_bleu(corpus) - oracle::self_bleu(corpus)) <= 1e-9);
    const auto got = metrics::embedding_metrics(cand, refs[0], wv);
    const auto want = oracle::embedding(cand, refs[0], table);
    REQUIRE(got.has_value() == want.has_value());
    if (got) {
      CHECK(std::abs(got->average - want->average) <= 1e-9);
      CHECK(std::abs(got->extrema - want->extrema) <= 1e-9);
      CHECK(std::abs(got->greedy - want->greedy) <= 1e-9);
    }
  }
}

TEST_CASE("self_bleu matches the oracle on larger corpora with duplicates") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<oracle::Tokens> corpus;
    for (int i = 0; i < 12; ++i) corpus.push_back(oracle::random_tokens(rng, 1, 10, 6));
    corpus.push_back(corpus[trial % 12]);
    corpus.push_back(corpus[(trial * 5) % 12]);
    CHECK(std::abs(metrics::self_bleu(corpus) - oracle::self_bleu(corpus)) <= 1e-9);
  }
}
