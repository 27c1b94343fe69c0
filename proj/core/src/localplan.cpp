#include "flowplan/localplan.hpp"

#include <stdexcept>

#include "flowplan/errors.hpp"

namespace flowplan {

GaussianParams prior_local(const Model& model, const PooledVec& h_x, const PooledVec& h_a) {
  if (h_x.dim() != model.d_model() || h_a.dim() != model.d_model())
    throw std::invalid_argument("prior_local: dimension mismatch");
  return model.local().prior(ag::concat_cols({h_x.vec, h_a.vec}));
}

GaussianParams posterior_local(const Model& model, const PooledVec& h_x, const PooledVec& h_a,
                               const PooledVec& h_y) {
  if (h_x.dim() != model.d_model() || h_a.dim() != model.d_model() ||
      h_y.dim() != model.d_model())
    throw std::invalid_argument("posterior_local: dimension mismatch");
  return model.local().posterior(ag::concat_cols({h_x.vec, h_a.vec, h_y.vec}));
}

PlanVector make_plan_vector(const PooledVec& h_a, const ag::Tensor& z_y) {
  if (h_a.vec.rows() != 1 || z_y.rows() != 1)
    throw std::invalid_argument("make_plan_vector: inputs must be row vectors");
  return PlanVector{ag::concat_cols({h_a.vec, z_y})};
}

std::vector<PooledVec> decoder_memory(const Model& model, const PooledVec& prev_utterance,
                                      const PooledVec& h_x, const PlanVector& plan) {
  if (plan.dim() != model.d_model() + model.d_z())
    throw std::invalid_argument("decoder_memory: plan vector dimension");
  return {prev_utterance, h_x, PooledVec{model.local().plan_projection(plan.vec)}};
}

ag::Tensor utterance_nll(const Model& model, const PooledVec& prev_utterance,
                         const PooledVec& h_x, const PlanVector& plan,
                         std::span<const TokenId> target, const nn::Context& ctx) {
  if (target.size() < 2) throw ValidationError("utterance_nll: empty target");
  auto memory = decoder_memory(model, prev_utterance, h_x, plan);
  auto inputs = target.first(target.size() - 1);
  ag::Tensor log_probs = model.backbone().decode_log_probs(memory, inputs, ctx);
  std::vector<std::size_t> next(target.size() - 1);
  for (std::size_t t = 1; t < target.size(); ++t) next[t - 1] = static_cast<std::size_t>(target[t]);
  return ag::nll_rows(log_probs, next);
}

LocalElbo elbo_local(const Model& model, const PooledVec& h_x, const PooledVec& h_a,
                     std::span<const TokenId> target, const PooledVec& h_y,
                     const PooledVec& prev_utterance, std::span<const double> eps,
                     const nn::Context& ctx) {
  LocalElbo out;
  out.prior = prior_local(model, h_x, h_a);
  out.posterior = posterior_local(model, h_x, h_a, h_y);
  out.z = sample_reparam(out.posterior, eps);
  out.kl_terms = ag::kl_diag_gaussian_terms(out.posterior.mu, out.posterior.sigma, out.prior.mu,
                                            out.prior.sigma);
  out.kl = ag::sum(out.kl_terms);
  out.token_nll =
      utterance_nll(model, prev_utterance, h_x, make_plan_vector(h_a, out.z), target, ctx);
  out.loss = out.kl + out.token_nll;
  return out;
}

}  // namespace flowplan
