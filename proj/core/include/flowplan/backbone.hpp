#pragma once

#include <random>
#include <span>
#include <vector>

#include "flowplan/autograd.hpp"
#include "flowplan/corpus.hpp"
#include "flowplan/nn.hpp"
#include "flowplan/tokenizer.hpp"

namespace flowplan {

struct BackboneConfig {
  std::size_t d_model = 128;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 512;
  double dropout = 0.1;
  std::size_t max_len = 64;        // utterance and node-text cap, BOS/EOS included
  std::size_t max_turn_len = 256;  // cap for a concatenated sub-dialogue
  std::size_t vocab_size = 0;      // filled from the vocabulary
  // Learned per-slot tags on the cross-attention memory. Without them the
  // decoder treats its memory as an unordered set.
  bool slot_embeddings = true;

  void validate() const;
  std::size_t positions() const { return max_len > max_turn_len ? max_len : max_turn_len; }
};

// Mean-pooled encoder output, 1 x d_model.
struct PooledVec {
  ag::Tensor vec;

  std::size_t dim() const { return vec.size(); }
  const std::vector<double>& values() const { return vec.value(); }
};

inline constexpr std::size_t kMemorySlots = 3;  // previous utterance, node, plan

// Transformer encoder-decoder shared by every pooled representation and by
// token decoding. Pre-LN layers, SiLU feed-forward blocks.
class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParamStore& store, const BackboneConfig& config, std::mt19937_64& rng);

  const BackboneConfig& config() const noexcept { return config_; }

  // Final-layer encoder states, one row per position (PAD rows included).
  ag::Tensor encode(std::span<const TokenId> tokens, const nn::Context& ctx) const;
  // Mean over non-PAD positions of the final encoder layer.
  PooledVec encode_pooled(std::span<const TokenId> tokens, const nn::Context& ctx) const;

  // Log-probabilities for every next-token position of the prefix (rows = prefix length).
  ag::Tensor decode_log_probs(const std::vector<PooledVec>& memory,
                              std::span<const TokenId> prefix, const nn::Context& ctx) const;

  // Learned y_{-1}: previous-utterance slot for the first utterance of a turn.
  PooledVec sentinel() const { return PooledVec{sentinel_}; }

 private:
  struct Attention {
    nn::Linear q, k, v, o;
  };
  struct EncoderLayer {
    nn::LayerNorm ln_attn, ln_ffn;
    Attention attn;
    nn::Linear ffn_in, ffn_out;
  };
  struct DecoderLayer {
    nn::LayerNorm ln_self, ln_cross, ln_ffn;
    Attention self_attn, cross_attn;
    nn::Linear ffn_in, ffn_out;
  };

  Attention make_attention(nn::ParamStore& store, const std::string& name, std::mt19937_64& rng);
  ag::Tensor attend(const Attention& a, const ag::Tensor& queries, const ag::Tensor& keys,
                    const std::vector<double>* mask, const nn::Context& ctx) const;
  ag::Tensor feed_forward(const nn::Linear& in, const nn::Linear& out, const ag::Tensor& x,
                          const nn::Context& ctx) const;
  ag::Tensor embed(std::span<const TokenId> tokens) const;

  BackboneConfig config_;
  ag::Tensor token_embedding_;
  ag::Tensor position_embedding_;
  ag::Tensor slot_embedding_;
  ag::Tensor sentinel_;
  std::vector<EncoderLayer> encoder_;
  nn::LayerNorm encoder_norm_;
  std::vector<DecoderLayer> decoder_;
  nn::LayerNorm decoder_norm_;
  nn::Linear output_;
};

// Token sequence for a sub-dialogue: BOS u0 SEP u1 ... EOS, capped at max_turn_len.
std::vector<TokenId> turn_tokens(const SubDialogue& sub, const Vocabulary& vocab,
                                 std::size_t max_utterance_len, std::size_t max_turn_len);
std::vector<TokenId> act_tokens(DialogueAct act);

}  // namespace flowplan
