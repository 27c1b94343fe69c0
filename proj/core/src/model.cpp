#include "flowplan/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "flowplan/errors.hpp"

namespace flowplan {

void ModelConfig::validate() const {
  backbone.validate();
  if (d_z == 0) throw ValidationError("model: d_z must be positive");
}

GaussianHead::GaussianHead(nn::ParamStore& store, const std::string& name, std::size_t in,
                           std::size_t hidden, std::size_t d_z, std::mt19937_64& rng)
    : trunk(store, name + ".trunk", in, hidden, rng),
      mu_out(store, name + ".mu", hidden, d_z, rng),
      sigma_out(store, name + ".sigma", hidden, d_z, rng) {}

GaussianParams GaussianHead::operator()(const ag::Tensor& input) const {
  ag::Tensor h = trunk(input);
  return {mu_out(h), ag::softplus(sigma_out(h))};
}

Model::Model(ModelConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.backbone.vocab_size = vocab_.size();
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  backbone_ = Backbone(params_, config_.backbone, rng);

  const std::size_t d = config_.backbone.d_model;
  const std::size_t hidden = 2 * d;
  const std::size_t dz = config_.d_z;
  global_.prior = GaussianHead(params_, "global.prior", d, hidden, dz, rng);
  global_.posterior = GaussianHead(params_, "global.posterior", 2 * d, hidden, dz, rng);
  global_.act_embedding =
      params_.create("global.act_embedding", kNumActs + 1, d, nn::Init::normal_small, rng);
  global_.act_hidden = nn::Linear(params_, "global.act_hidden", 2 * d + dz, hidden, rng);
  global_.act_out = nn::Linear(params_, "global.act_out", hidden, kNumActs, rng);

  local_.prior = GaussianHead(params_, "local.prior", 2 * d, hidden, dz, rng);
  local_.posterior = GaussianHead(params_, "local.posterior", 3 * d, hidden, dz, rng);
  local_.plan_projection = nn::Linear(params_, "local.plan_projection", d + dz, d, rng);
}

std::uint64_t Model::fingerprint() const {
  std::uint64_t h = vocab_.hash();
  for (const auto& e : params_.entries()) {
    h = fnv1a(e.name, h);
    const auto& v = e.tensor.value();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)),
              h);
  }
  return h;
}

PooledVec encode_pooled(const Model& model, std::span<const TokenId> tokens,
                        const nn::Context& ctx) {
  return model.backbone().encode_pooled(tokens, ctx);
}

PooledVec encode_text_pooled(const Model& model, std::string_view text, const nn::Context& ctx) {
  auto ids = tokenize(text, model.vocab(), model.config().backbone.max_len);
  return encode_pooled(model, ids, ctx);
}

PooledVec encode_turn_pooled(const Model& model, const SubDialogue& sub, const nn::Context& ctx) {
  if (sub.utterances.empty()) throw ValidationError("encode_turn_pooled: empty sub-dialogue");
  const auto& cfg = model.config().backbone;
  auto ids = turn_tokens(sub, model.vocab(), cfg.max_len, cfg.max_turn_len);
  return encode_pooled(model, ids, ctx);
}

PooledVec encode_act_pooled(const Model& model, DialogueAct act, const nn::Context& ctx) {
  auto ids = act_tokens(act);
  return encode_pooled(model, ids, ctx);
}

std::vector<PooledVec> encode_pooled_batch(const Model& model,
                                           const std::vector<std::vector<TokenId>>& batch,
                                           const nn::Context& ctx) {
  std::size_t width = 0;
  for (const auto& seq : batch) width = std::max(width, seq.size());
  std::vector<PooledVec> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) {
    std::vector<TokenId> padded(seq);
    padded.resize(width, Vocabulary::kPad);
    out.push_back(encode_pooled(model, padded, ctx));
  }
  return out;
}

std::vector<double> decode_step(const Model& model, const std::vector<PooledVec>& memory,
                                std::span<const TokenId> prefix) {
  if (prefix.empty()) throw ValidationError("decode_step: prefix must contain BOS");
  ag::NoGradGuard guard;
  ag::Tensor log_probs = model.backbone().decode_log_probs(memory, prefix, nn::Context::eval());
  const std::size_t v = log_probs.cols();
  const std::size_t last = log_probs.rows() - 1;
  std::vector<double> probs(v);
  for (std::size_t j = 0; j < v; ++j) probs[j] = std::exp(log_probs.at(last, j));
  return probs;
}

std::vector<TokenId> node_tokens(const Model& model, const FlowNode& node,
                                 const std::optional<std::string>& response) {
  const Vocabulary& vocab = model.vocab();
  const std::size_t max_len = model.config().backbone.max_len;
  std::vector<TokenId> resp;
  if (response) {
    resp.push_back(Vocabulary::kSep);
    for (const auto& t : normalize_tokens(*response)) resp.push_back(vocab.id(t));
  }
  const std::size_t room = max_len > resp.size() + 2 ? max_len - resp.size() - 2 : 0;
  std::vector<TokenId> ids{Vocabulary::kBos};
  for (const auto& t : normalize_tokens(node.text)) {
    if (ids.size() - 1 >= room) break;
    ids.push_back(vocab.id(t));
  }
  for (TokenId id : resp) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(id);
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

}  // namespace flowplan
