#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "flowplan/globalplan.hpp"
#include "flowplan/localplan.hpp"
#include "flowplan/toy.hpp"
#include "flowplan/training.hpp"

using namespace flowplan;

namespace {

GaussianParams gaussian(std::vector<double> mu, std::vector<double> sigma) {
  const std::size_t d = mu.size();
  return {ag::Tensor::constant(1, d, std::move(mu)), ag::Tensor::constant(1, d, std::move(sigma))};
}

struct Setup {
  toy::ToyData data = toy::make_toy();
  TrainConfig cfg = fixtures::toy_config();
  Model model{cfg.model_config(), build_vocabulary(data.corpus, data.chart_map(), cfg.vocab_max)};
};

}  // namespace

TEST_CASE("closed-form KL") {
  CHECK(std::abs(kl_diag_gaussian_value(gaussian({1}, {1}), gaussian({0}, {1})) - 0.5) < 1e-12);
  CHECK(kl_diag_gaussian_value(gaussian({0.2, -1}, {0.5, 2}), gaussian({0.2, -1}, {0.5, 2})) == 0.0);
  // KL(N(0, s^2) || N(0, 1)) = 0.5 (s^2 - 1) - log s
  const double s = 2.0;
  CHECK(kl_diag_gaussian_value(gaussian({0}, {s}), gaussian({0}, {1})) ==
        doctest::Approx(0.5 * (s * s - 1) - std::log(s)));
  const auto q = gaussian({0.1, 0.4, -0.3}, {0.9, 1.3, 0.4});
  const auto p = gaussian({-0.2, 0.0, 0.5}, {1.1, 0.6, 0.8});
  CHECK(kl_diag_gaussian(q, p).item() == doctest::Approx(kl_diag_gaussian_value(q, p)).epsilon(1e-14));
  CHECK(kl_diag_gaussian_value(q, p) > 0);
}

TEST_CASE("reparametrized sampling and densities") {
  const auto g = gaussian({1.0, -2.0}, {0.5, 3.0});
  const std::vector<double> eps{2.0, -1.0};
  const auto z = sample_reparam(g, eps);
  CHECK(z.value() == std::vector<double>{2.0, -5.0});
  const double expected = -0.5 * (4.0 + 1.0) - std::log(0.5) - std::log(3.0) - std::log(2 * M_PI);
  CHECK(log_normal_density(z.value(), g) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("global planner heads") {
  Setup s;
  const auto h_x = encode_text_pooled(s.model, "is the printer powered on");
  const auto h_y = encode_text_pooled(s.model, "is it on ? yes");
  const auto prior = prior_global(s.model, h_x);
  const auto post = posterior_global(s.model, h_x, h_y);
  CHECK(prior.dim() == s.cfg.d_z);
  CHECK(post.dim() == s.cfg.d_z);
  for (double v : prior.sigma.value()) CHECK(v > 0);
  for (double v : post.sigma.value()) CHECK(v > 0);

  const auto z = sample_reparam(prior, std::vector<double>(s.cfg.d_z, 0.3));
  const auto probs = act_step(s.model, std::nullopt, h_x, z);
  double total = 0;
  for (double p : probs) {
    CHECK(p > 0);
    total += p;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<DialogueAct> acts{DialogueAct::yes_no_question, DialogueAct::inform};
  const auto elbo = elbo_global(s.model, h_x, acts, h_y, std::vector<double>(s.cfg.d_z, 0.1));
  CHECK(elbo.kl_terms.cols() == s.cfg.d_z);
  CHECK(elbo.act_nll.item() > 0);
  CHECK(elbo.loss.item() == doctest::Approx(elbo.kl.item() + elbo.act_nll.item()));
  const auto logits = act_logits(s.model, {std::nullopt, DialogueAct::yes_no_question}, h_x, elbo.z);
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == kNumActs);
}

TEST_CASE("local planner and decoder memory") {
  Setup s;
  const auto h_x = encode_text_pooled(s.model, "is the printer powered on");
  const auto h_a = encode_act_pooled(s.model, DialogueAct::inform);
  const auto target = tokenize("yes it is", s.model.vocab(), 32);
  const auto h_y = encode_pooled(s.model, target);
  const auto prev = s.model.backbone().sentinel();
  const auto elbo = elbo_local(s.model, h_x, h_a, target, h_y, prev, std::vector<double>(s.cfg.d_z, 0.0));
  CHECK(elbo.loss.item() == doctest::Approx(elbo.kl.item() + elbo.token_nll.item()));
  CHECK(elbo.token_nll.item() > 0);

  const auto plan = make_plan_vector(h_a, elbo.z);
  CHECK(plan.dim() == s.model.d_model() + s.cfg.d_z);
  const auto memory = decoder_memory(s.model, prev, h_x, plan);
  REQUIRE(memory.size() == kMemorySlots);
  for (const auto& m : memory) CHECK(m.dim() == s.model.d_model());

  // Zero noise means z equals the posterior mean.
  CHECK(elbo.z.value() == elbo.posterior.mu.value());
  const auto nll = utterance_nll(s.model, prev, h_x, plan, target);
  CHECK(nll.item() == doctest::Approx(elbo.token_nll.item()));
}
