#pragma once

#include <span>
#include <vector>

#include "flowplan/globalplan.hpp"
#include "flowplan/model.hpp"

namespace flowplan {

// [h_a || z_y], 1 x (d_model + d_z).
struct PlanVector {
  ag::Tensor vec;

  std::size_t dim() const { return vec.size(); }
};

GaussianParams prior_local(const Model& model, const PooledVec& h_x, const PooledVec& h_a);
GaussianParams posterior_local(const Model& model, const PooledVec& h_x, const PooledVec& h_a,
                               const PooledVec& h_y);

PlanVector make_plan_vector(const PooledVec& h_a, const ag::Tensor& z_y);

// Three-slot cross-attention memory: previous utterance, node, projected plan.
std::vector<PooledVec> decoder_memory(const Model& model, const PooledVec& prev_utterance,
                                      const PooledVec& h_x, const PlanVector& plan);

// Teacher-forced NLL summed over the target positions after BOS.
ag::Tensor utterance_nll(const Model& model, const PooledVec& prev_utterance,
                         const PooledVec& h_x, const PlanVector& plan,
                         std::span<const TokenId> target,
                         const nn::Context& ctx = nn::Context::eval());

struct LocalElbo {
  ag::Tensor loss;  // kl + token_nll
  ag::Tensor kl;
  ag::Tensor kl_terms;
  ag::Tensor token_nll;
  ag::Tensor z;
  GaussianParams prior;
  GaussianParams posterior;
};

// target: the ground-truth utterance tokens; h_y: its pooled encoding.
LocalElbo elbo_local(const Model& model, const PooledVec& h_x, const PooledVec& h_a,
                     std::span<const TokenId> target, const PooledVec& h_y,
                     const PooledVec& prev_utterance, std::span<const double> eps,
                     const nn::Context& ctx = nn::Context::eval());

}  // namespace flowplan
