#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "flowplan/model.hpp"

namespace flowplan {

GaussianParams prior_global(const Model& model, const PooledVec& h_x);
GaussianParams posterior_global(const Model& model, const PooledVec& h_x, const PooledVec& h_y);

// z = mu + sigma * eps.
ag::Tensor sample_reparam(const GaussianParams& params, std::span<const double> eps);

// Closed-form KL(q || p) summed over dimensions (1 x 1).
ag::Tensor kl_diag_gaussian(const GaussianParams& q, const GaussianParams& p);
double kl_diag_gaussian_value(const GaussianParams& q, const GaussianParams& p);

// log N(z; mu, diag(sigma^2)) summed over dimensions.
double log_normal_density(std::span<const double> z, const GaussianParams& params);

// Act-head logits for every step of a teacher-forced turn (rows = steps).
// prev[j] is nullopt for the turn-start marker.
ag::Tensor act_logits(const Model& model, const std::vector<std::optional<DialogueAct>>& prev,
                      const PooledVec& h_x, const ag::Tensor& z_a);

// p(a_j | a_{j-1}, x_i, z_a) as 7 probabilities in DialogueAct order.
std::array<double, kNumActs> act_step(const Model& model, std::optional<DialogueAct> prev_act,
                                      const PooledVec& h_x, const ag::Tensor& z_a);

struct GlobalElbo {
  ag::Tensor loss;      // kl + act_nll
  ag::Tensor kl;        // 1 x 1
  ag::Tensor kl_terms;  // 1 x d_z
  ag::Tensor act_nll;   // 1 x 1
  ag::Tensor z;
  GaussianParams prior;
  GaussianParams posterior;
};

// Negated global ELBO using one reparametrized posterior sample.
GlobalElbo elbo_global(const Model& model, const PooledVec& h_x,
                       const std::vector<DialogueAct>& acts, const PooledVec& h_y,
                       std::span<const double> eps);

}  // namespace flowplan
