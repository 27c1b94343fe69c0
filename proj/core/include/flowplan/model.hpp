#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "flowplan/backbone.hpp"
#include "flowplan/corpus.hpp"
#include "flowplan/nn.hpp"
#include "flowplan/tokenizer.hpp"

namespace flowplan {

struct ModelConfig {
  BackboneConfig backbone;
  std::size_t d_z = 32;  // shared by the global and local latents
  std::uint64_t seed = 0;

  void validate() const;
};

// Diagonal Gaussian, both parts 1 x d_z.
struct GaussianParams {
  ag::Tensor mu;
  ag::Tensor sigma;

  std::size_t dim() const { return mu.size(); }
};

// mu = Trunk -> Linear; sigma = softplus(Trunk -> Linear).
struct GaussianHead {
  nn::Trunk trunk;
  nn::Linear mu_out;
  nn::Linear sigma_out;

  GaussianHead() = default;
  GaussianHead(nn::ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
               std::size_t d_z, std::mt19937_64& rng);
  GaussianParams operator()(const ag::Tensor& input) const;
};

struct GlobalPlanner {
  GaussianHead prior;      // over h_x
  GaussianHead posterior;  // over [h_x, h_y]
  ag::Tensor act_embedding;  // (kNumActs + 1) x d_model; the last row is the turn-start marker
  nn::Linear act_hidden;
  nn::Linear act_out;
};

struct LocalPlanner {
  GaussianHead prior;      // over [h_x, h_a]
  GaussianHead posterior;  // over [h_x, h_a, h_y]
  nn::Linear plan_projection;  // (d_model + d_z) -> d_model memory slot
};

class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  nn::ParamStore& params() noexcept { return params_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  const Backbone& backbone() const noexcept { return backbone_; }
  const GlobalPlanner& global() const noexcept { return global_; }
  const LocalPlanner& local() const noexcept { return local_; }

  std::size_t d_model() const noexcept { return config_.backbone.d_model; }
  std::size_t d_z() const noexcept { return config_.d_z; }

  // FNV-1a over the vocabulary and the raw parameter bytes.
  std::uint64_t fingerprint() const;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  nn::ParamStore params_;
  Backbone backbone_;
  GlobalPlanner global_;
  LocalPlanner local_;
};

// Pooled text representations. Every call runs the shared encoder.
PooledVec encode_pooled(const Model& model, std::span<const TokenId> tokens,
                        const nn::Context& ctx = nn::Context::eval());
PooledVec encode_text_pooled(const Model& model, std::string_view text,
                             const nn::Context& ctx = nn::Context::eval());
PooledVec encode_turn_pooled(const Model& model, const SubDialogue& sub,
                             const nn::Context& ctx = nn::Context::eval());
PooledVec encode_act_pooled(const Model& model, DialogueAct act,
                            const nn::Context& ctx = nn::Context::eval());
// Padded batch; each row pooled over its own non-PAD positions.
std::vector<PooledVec> encode_pooled_batch(const Model& model,
                                           const std::vector<std::vector<TokenId>>& batch,
                                           const nn::Context& ctx = nn::Context::eval());

// Next-token distribution after the prefix, cross-attending over memory.
std::vector<double> decode_step(const Model& model, const std::vector<PooledVec>& memory,
                                std::span<const TokenId> prefix);

// Node input x_i: the node text, followed by SEP and the chosen response on
// non-terminal steps.
std::vector<TokenId> node_tokens(const Model& model, const FlowNode& node,
                                 const std::optional<std::string>& response);

}  // namespace flowplan
