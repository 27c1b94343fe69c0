#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "flowplan/model.hpp"
#include "flowplan/tokenizer.hpp"
#include "flowplan/toy.hpp"

using namespace flowplan;

namespace {

Model small_model() {
  const auto data = toy::make_toy();
  const auto cfg = fixtures::toy_config();
  return Model(cfg.model_config(), build_vocabulary(data.corpus, data.chart_map(), cfg.vocab_max));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("normalizer splits punctuation and lower-cases") {
  CHECK(normalize_tokens("Hi, it's  BROKEN!") ==
        std::vector<std::string>{"hi", ",", "it's", "broken", "!"});
  CHECK(normalize("  A.b ") == "a . b");
  CHECK(normalize_tokens("").empty());
}

TEST_CASE("vocabulary layout and persistence") {
  const Vocabulary v = Vocabulary::build({"b a", "a c", "a"}, 100);
  CHECK(v.size() == Vocabulary::kReserved + 3);
  CHECK(v.token(Vocabulary::kReserved) == "a");  // most frequent first
  CHECK(v.token(Vocabulary::kReserved + 1) == "b");  // ties lexicographic
  CHECK(v.id("zzz") == Vocabulary::kUnk);
  CHECK(Vocabulary::is_special(Vocabulary::act_marker(DialogueAct::suggestion)));
  CHECK(Vocabulary::is_special(Vocabulary::speaker_marker(Speaker::agent)));
  CHECK_FALSE(Vocabulary::is_special(static_cast<TokenId>(Vocabulary::kReserved)));
  CHECK(Vocabulary::build({"b a", "a c", "a"}, Vocabulary::kReserved + 1).size() == Vocabulary::kReserved + 1);

  const Vocabulary back = Vocabulary::load(v.save());
  CHECK(back.tokens() == v.tokens());
  CHECK(back.hash() == v.hash());
}

TEST_CASE("tokenize and detokenize") {
  const Vocabulary v = Vocabulary::build({"is it on ?"}, 100);
  const auto ids = tokenize("Is it ON? maybe", v, 64);
  REQUIRE(ids.size() == 7);
  CHECK(ids.front() == Vocabulary::kBos);
  CHECK(ids.back() == Vocabulary::kEos);
  CHECK(ids[5] == Vocabulary::kUnk);
  CHECK(detokenize(ids, v) == "is it on ? <unk>");
  CHECK(tokenize("is it on ? is it on ?", v, 5).size() == 5);
  CHECK(tokenize("is it on ? is it on ?", v, 5).back() == Vocabulary::kEos);
}

TEST_CASE("turn and act sequences") {
  const Vocabulary v = Vocabulary::build({"a b", "c"}, 100);
  SubDialogue sub{"n", {{Speaker::user, "a b", DialogueAct::inform}, {Speaker::agent, "c", DialogueAct::inform}}};
  const auto t = turn_tokens(sub, v, 64, 256);
  CHECK(t == std::vector<TokenId>{Vocabulary::kBos, v.id("a"), v.id("b"), Vocabulary::kSep, v.id("c"),
                                  Vocabulary::kEos});
  CHECK(act_tokens(DialogueAct::closing) ==
        std::vector<TokenId>{Vocabulary::kBos, Vocabulary::act_marker(DialogueAct::closing), Vocabulary::kEos});
}

TEST_CASE("encoder shapes, pooling and padding invariance") {
  const Model m = small_model();
  const auto ids = tokenize("is the printer powered on", m.vocab(), 32);
  const ag::Tensor states = m.backbone().encode(ids, nn::Context::eval());
  CHECK(states.rows() == ids.size());
  CHECK(states.cols() == m.d_model());

  const PooledVec p = encode_pooled(m, ids);
  CHECK(p.dim() == m.d_model());
  auto padded = ids;
  padded.resize(ids.size() + 5, Vocabulary::kPad);
  CHECK(max_abs_diff(encode_pooled(m, padded).values(), p.values()) < 1e-12);

  const auto batch = encode_pooled_batch(m, {ids, tokenize("no", m.vocab(), 32)});
  REQUIRE(batch.size() == 2);
  CHECK(max_abs_diff(batch[0].values(), p.values()) < 1e-12);
  CHECK(max_abs_diff(batch[1].values(), encode_text_pooled(m, "no").values()) < 1e-12);
}

TEST_CASE("decoder is causal and yields distributions") {
  const Model m = small_model();
  const std::vector<PooledVec> memory{m.backbone().sentinel(), encode_text_pooled(m, "is it on"),
                                      encode_act_pooled(m, DialogueAct::inform)};
  const auto prefix = tokenize("yes it is", m.vocab(), 32);
  const auto lp = m.backbone().decode_log_probs(memory, prefix, nn::Context::eval());
  CHECK(lp.rows() == prefix.size());
  CHECK(lp.cols() == m.vocab().size());
  for (std::size_t r = 0; r < lp.rows(); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < lp.cols(); ++c) s += std::exp(lp.at(r, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
  }
  // Changing a later token must not change earlier rows.
  auto altered = prefix;
  altered[2] = m.vocab().id("no");
  const auto lp2 = m.backbone().decode_log_probs(memory, altered, nn::Context::eval());
  for (std::size_t c = 0; c < lp.cols(); ++c) {
    CHECK(lp2.at(0, c) == doctest::Approx(lp.at(0, c)).epsilon(1e-12));
    CHECK(lp2.at(1, c) == doctest::Approx(lp.at(1, c)).epsilon(1e-12));
  }
  const auto step = decode_step(m, memory, prefix);
  double s = 0;
  for (double x : step) s += x;
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("node input carries the chosen response") {
  const Model m = small_model();
  const FlowNode n{"q0", NodeKind::decision, "is the printer powered on"};
  const auto with = node_tokens(m, n, std::string("yes"));
  const auto without = node_tokens(m, n, std::nullopt);
  CHECK(with.size() == without.size() + 2);
  CHECK(std::find(with.begin(), with.end(), Vocabulary::kSep) != with.end());
}

TEST_CASE("model construction is seeded") {
  const Model a = small_model();
  const Model b = small_model();
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.params().scalar_count() > 0);
}
