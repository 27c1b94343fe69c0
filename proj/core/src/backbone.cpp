#include "flowplan/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "flowplan/errors.hpp"

namespace flowplan {

namespace {
constexpr double kMasked = -1e30;
}

void BackboneConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw ValidationError("backbone: d_model must be a positive multiple of heads");
  if (max_len < 2) throw ValidationError("backbone: max_len must be at least 2");
  if (max_turn_len < 2) throw ValidationError("backbone: max_turn_len must be at least 2");
  if (ffn == 0) throw ValidationError("backbone: ffn width must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("backbone: dropout must lie in [0, 1)");
  if (vocab_size < Vocabulary::kReserved)
    throw ValidationError("backbone: vocab_size smaller than the reserved block");
}

Backbone::Attention Backbone::make_attention(nn::ParamStore& store, const std::string& name,
                                             std::mt19937_64& rng) {
  const std::size_t d = config_.d_model;
  return {nn::Linear(store, name + ".q", d, d, rng), nn::Linear(store, name + ".k", d, d, rng),
          nn::Linear(store, name + ".v", d, d, rng), nn::Linear(store, name + ".o", d, d, rng)};
}

Backbone::Backbone(nn::ParamStore& store, const BackboneConfig& config, std::mt19937_64& rng)
    : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  token_embedding_ =
      store.create("backbone.token_embedding", config_.vocab_size, d, nn::Init::normal_small, rng);
  position_embedding_ = store.create("backbone.position_embedding", config_.positions(), d,
                                     nn::Init::normal_small, rng);
  if (config_.slot_embeddings)
    slot_embedding_ =
        store.create("backbone.slot_embedding", kMemorySlots, d, nn::Init::normal_small, rng);
  sentinel_ = store.create("backbone.sentinel", 1, d, nn::Init::normal_small, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const std::string p = "backbone.encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.ln_attn = nn::LayerNorm(store, p + ".ln_attn", d, rng);
    layer.attn = make_attention(store, p + ".attn", rng);
    layer.ln_ffn = nn::LayerNorm(store, p + ".ln_ffn", d, rng);
    layer.ffn_in = nn::Linear(store, p + ".ffn_in", d, config_.ffn, rng);
    layer.ffn_out = nn::Linear(store, p + ".ffn_out", config_.ffn, d, rng);
    encoder_.push_back(std::move(layer));
  }
  encoder_norm_ = nn::LayerNorm(store, "backbone.encoder.norm", d, rng);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = "backbone.decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.ln_self = nn::LayerNorm(store, p + ".ln_self", d, rng);
    layer.self_attn = make_attention(store, p + ".self_attn", rng);
    layer.ln_cross = nn::LayerNorm(store, p + ".ln_cross", d, rng);
    layer.cross_attn = make_attention(store, p + ".cross_attn", rng);
    layer.ln_ffn = nn::LayerNorm(store, p + ".ln_ffn", d, rng);
    layer.ffn_in = nn::Linear(store, p + ".ffn_in", d, config_.ffn, rng);
    layer.ffn_out = nn::Linear(store, p + ".ffn_out", config_.ffn, d, rng);
    decoder_.push_back(std::move(layer));
  }
  decoder_norm_ = nn::LayerNorm(store, "backbone.decoder.norm", d, rng);
  output_ = nn::Linear(store, "backbone.output", d, config_.vocab_size, rng);
}

ag::Tensor Backbone::attend(const Attention& a, const ag::Tensor& queries, const ag::Tensor& keys,
                            const std::vector<double>* mask, const nn::Context& ctx) const {
  const std::size_t d = config_.d_model;
  const std::size_t dh = d / config_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  ag::Tensor q = a.q(queries);
  ag::Tensor k = a.k(keys);
  ag::Tensor v = a.v(keys);
  std::vector<ag::Tensor> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    ag::Tensor scores =
        ag::scale(ag::matmul_nt(ag::slice_cols(q, h * dh, dh), ag::slice_cols(k, h * dh, dh)),
                  inv_sqrt);
    if (mask != nullptr) scores = ag::add_constant(scores, *mask);
    ag::Tensor weights = ag::softmax_rows(scores);
    heads.push_back(ag::matmul(weights, ag::slice_cols(v, h * dh, dh)));
  }
  ag::Tensor merged = heads.size() == 1 ? heads.front() : ag::concat_cols(heads);
  ag::Tensor out = a.o(merged);
  if (ctx.train && ctx.rng != nullptr) out = ag::dropout(out, ctx.dropout, *ctx.rng);
  return out;
}

ag::Tensor Backbone::feed_forward(const nn::Linear& in, const nn::Linear& out, const ag::Tensor& x,
                                  const nn::Context& ctx) const {
  ag::Tensor y = out(ag::silu(in(x)));
  if (ctx.train && ctx.rng != nullptr) y = ag::dropout(y, ctx.dropout, *ctx.rng);
  return y;
}

ag::Tensor Backbone::embed(std::span<const TokenId> tokens) const {
  std::vector<std::size_t> ids(tokens.size()), pos(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= config_.vocab_size)
      throw std::invalid_argument("token id out of vocabulary range");
    ids[i] = static_cast<std::size_t>(tokens[i]);
    pos[i] = i;
  }
  if (tokens.size() > config_.positions())
    throw std::invalid_argument("sequence longer than the position table");
  return ag::gather_rows(token_embedding_, ids) + ag::gather_rows(position_embedding_, pos);
}

ag::Tensor Backbone::encode(std::span<const TokenId> tokens, const nn::Context& ctx) const {
  if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
  const std::size_t t = tokens.size();
  std::vector<double> mask;
  bool any_pad = false;
  for (TokenId id : tokens) any_pad = any_pad || id == Vocabulary::kPad;
  if (any_pad) {
    mask.assign(t * t, 0.0);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        if (tokens[j] == Vocabulary::kPad) mask[i * t + j] = kMasked;
  }
  ag::Tensor x = embed(tokens);
  if (ctx.train && ctx.rng != nullptr) x = ag::dropout(x, ctx.dropout, *ctx.rng);
  for (const auto& layer : encoder_) {
    ag::Tensor h = layer.ln_attn(x);
    x = x + attend(layer.attn, h, h, any_pad ? &mask : nullptr, ctx);
    x = x + feed_forward(layer.ffn_in, layer.ffn_out, layer.ln_ffn(x), ctx);
  }
  return encoder_norm_(x);
}

PooledVec Backbone::encode_pooled(std::span<const TokenId> tokens, const nn::Context& ctx) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] != Vocabulary::kPad) keep.push_back(i);
  if (keep.empty()) throw ValidationError("encode_pooled: input is all padding");
  ag::Tensor states = encode(tokens, ctx);
  if (keep.size() == tokens.size()) return PooledVec{ag::mean_rows(states)};
  return PooledVec{ag::mean_rows(ag::gather_rows(states, keep))};
}

ag::Tensor Backbone::decode_log_probs(const std::vector<PooledVec>& memory,
                                      std::span<const TokenId> prefix,
                                      const nn::Context& ctx) const {
  if (memory.empty()) throw std::invalid_argument("decode: memory must not be empty");
  if (prefix.empty()) throw std::invalid_argument("decode: prefix must contain BOS");
  if (config_.slot_embeddings && memory.size() > kMemorySlots)
    throw std::invalid_argument("decode: more memory vectors than slots");
  std::vector<ag::Tensor> rows;
  rows.reserve(memory.size());
  for (const auto& m : memory) {
    if (m.dim() != config_.d_model) throw std::invalid_argument("decode: memory dimension mismatch");
    rows.push_back(m.vec);
  }
  ag::Tensor mem = ag::concat_rows(rows);
  if (config_.slot_embeddings) mem = mem + ag::slice_rows(slot_embedding_, 0, memory.size());

  const std::size_t t = prefix.size();
  std::vector<double> causal(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) causal[i * t + j] = kMasked;

  ag::Tensor y = embed(prefix);
  if (ctx.train && ctx.rng != nullptr) y = ag::dropout(y, ctx.dropout, *ctx.rng);
  for (const auto& layer : decoder_) {
    ag::Tensor h = layer.ln_self(y);
    y = y + attend(layer.self_attn, h, h, &causal, ctx);
    y = y + attend(layer.cross_attn, layer.ln_cross(y), mem, nullptr, ctx);
    y = y + feed_forward(layer.ffn_in, layer.ffn_out, layer.ln_ffn(y), ctx);
  }
  return ag::log_softmax_rows(output_(decoder_norm_(y)));
}

std::vector<TokenId> turn_tokens(const SubDialogue& sub, const Vocabulary& vocab,
                                 std::size_t max_utterance_len, std::size_t max_turn_len) {
  if (sub.utterances.empty()) throw ValidationError("turn_tokens: empty sub-dialogue");
  std::vector<TokenId> ids{Vocabulary::kBos};
  for (std::size_t j = 0; j < sub.utterances.size(); ++j) {
    if (j > 0) ids.push_back(Vocabulary::kSep);
    auto utt = tokenize(sub.utterances[j].text, vocab, max_utterance_len);
    ids.insert(ids.end(), utt.begin() + 1, utt.end() - 1);
  }
  if (ids.size() + 1 > max_turn_len) ids.resize(max_turn_len - 1);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<TokenId> act_tokens(DialogueAct act) {
  return {Vocabulary::kBos, Vocabulary::act_marker(act), Vocabulary::kEos};
}

}  // namespace flowplan
