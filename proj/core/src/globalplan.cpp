#include "flowplan/globalplan.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace flowplan {

GaussianParams prior_global(const Model& model, const PooledVec& h_x) {
  if (h_x.dim() != model.d_model()) throw std::invalid_argument("prior_global: h_x dimension");
  return model.global().prior(h_x.vec);
}

GaussianParams posterior_global(const Model& model, const PooledVec& h_x, const PooledVec& h_y) {
  if (h_x.dim() != model.d_model() || h_y.dim() != model.d_model())
    throw std::invalid_argument("posterior_global: dimension mismatch");
  return model.global().posterior(ag::concat_cols({h_x.vec, h_y.vec}));
}

ag::Tensor sample_reparam(const GaussianParams& params, std::span<const double> eps) {
  if (eps.size() != params.dim()) throw std::invalid_argument("sample_reparam: eps dimension");
  ag::Tensor noise = ag::Tensor::row(std::vector<double>(eps.begin(), eps.end()));
  return params.mu + params.sigma * noise;
}

ag::Tensor kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p) {
  return ag::sum(ag::kl_diag_gaussian_terms(q.mu, q.sigma, p.mu, p.sigma));
}

double kl_diag_gaussian_value(const GaussianParams& q, const GaussianParams& p) {
  if (q.dim() != p.dim() || q.sigma.size() != q.dim() || p.sigma.size() != p.dim())
    throw std::invalid_argument("kl_diag_gaussian: dimension mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < q.dim(); ++k)
    total += ag::kl_term(q.mu.value()[k], q.sigma.value()[k], p.mu.value()[k], p.sigma.value()[k]);
  return total;
}

double log_normal_density(std::span<const double> z, const GaussianParams& params) {
  if (z.size() != params.dim()) throw std::invalid_argument("log_normal_density: dimension");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double s = params.sigma.value()[k];
    const double u = (z[k] - params.mu.value()[k]) / s;
    total += -half_log_2pi - std::log(s) - 0.5 * u * u;
  }
  return total;
}

ag::Tensor act_logits(const Model& model, const std::vector<std::optional<DialogueAct>>& prev,
                      const PooledVec& h_x, const ag::Tensor& z_a) {
  if (z_a.size() != model.d_z()) throw std::invalid_argument("act_step: z_a dimension");
  if (prev.empty()) throw std::invalid_argument("act_step: no steps");
  std::vector<std::size_t> rows;
  rows.reserve(prev.size());
  for (const auto& a : prev)
    rows.push_back(a ? static_cast<std::size_t>(*a) : kNumActs);
  const GlobalPlanner& g = model.global();
  ag::Tensor embedded = ag::gather_rows(g.act_embedding, rows);
  std::vector<ag::Tensor> context_rows(prev.size(), ag::concat_cols({h_x.vec, z_a}));
  ag::Tensor context = prev.size() == 1 ? context_rows.front() : ag::concat_rows(context_rows);
  return g.act_out(ag::silu(g.act_hidden(ag::concat_cols({embedded, context}))));
}

std::array<double, kNumActs> act_step(const Model& model, std::optional<DialogueAct> prev_act,
                                      const PooledVec& h_x, const ag::Tensor& z_a) {
  ag::NoGradGuard guard;
  ag::Tensor probs = ag::softmax_rows(act_logits(model, {prev_act}, h_x, z_a));
  std::array<double, kNumActs> out{};
  for (std::size_t k = 0; k < kNumActs; ++k) out[k] = probs.value()[k];
  return out;
}

GlobalElbo elbo_global(const Model& model, const PooledVec& h_x,
                       const std::vector<DialogueAct>& acts, const PooledVec& h_y,
                       std::span<const double> eps) {
  if (acts.empty()) throw std::invalid_argument("elbo_global: empty act sequence");
  GlobalElbo out;
  out.prior = prior_global(model, h_x);
  out.posterior = posterior_global(model, h_x, h_y);
  out.z = sample_reparam(out.posterior, eps);
  out.kl_terms = ag::kl_diag_gaussian_terms(out.posterior.mu, out.posterior.sigma, out.prior.mu,
                                            out.prior.sigma);
  out.kl = ag::sum(out.kl_terms);

  std::vector<std::optional<DialogueAct>> prev{std::nullopt};
  std::vector<std::size_t> targets;
  for (std::size_t j = 0; j < acts.size(); ++j) {
    if (j + 1 < acts.size()) prev.push_back(acts[j]);
    targets.push_back(static_cast<std::size_t>(acts[j]));
  }
  out.act_nll =
      ag::nll_rows(ag::log_softmax_rows(act_logits(model, prev, h_x, out.z)), targets);
  out.loss = out.kl + out.act_nll;
  return out;
}

}  // namespace flowplan
