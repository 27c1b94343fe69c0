#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "flowplan/checkpoint.hpp"
#include "flowplan/corpus.hpp"
#include "flowplan/flowgraph.hpp"
#include "flowplan/model.hpp"

namespace flowplan {

enum class ActDecoding { sample, greedy };
enum class TokenDecoding { sample, greedy, top_k };

// When a sub-dialogue's act loop stops. On decision nodes the loop ends at an
// act from decision_terminal, provided a yes_no_question was already emitted
// in the turn if require_question is set. On the final action node it ends
// at any act from action_terminal. Both stop at the utterance cap.
struct TerminationRule {
  std::set<DialogueAct> decision_terminal{DialogueAct::inform};
  bool require_question = true;
  std::set<DialogueAct> action_terminal{DialogueAct::suggestion, DialogueAct::closing};
};

struct GenerationConfig {
  std::uint64_t seed = 1;
  ActDecoding act_decoding = ActDecoding::sample;
  double act_temperature = 1.0;
  TokenDecoding token_decoding = TokenDecoding::top_k;
  double token_temperature = 0.9;
  std::size_t top_k = 20;
  std::size_t max_utterances = 6;
  std::size_t max_tokens = 64;  // BOS and EOS included
  std::size_t factor = 10;
  std::size_t threads = 1;
  TerminationRule termination;
  std::map<DialogueAct, Speaker> speaker_overrides;

  void validate() const;
  static GenerationConfig greedy();
};

Speaker speaker_for(DialogueAct act, const GenerationConfig& config);

struct NodeGeneration {
  SubDialogue sub_dialogue;
  bool fallback = false;  // decoding degenerated; node text used verbatim
};

// Ancestral sampling for one path node: z_a from the global prior, then per
// utterance an act, z_y from the local prior, and the tokens.
NodeGeneration generate_for_node(const Model& model, const FlowNode& node,
                                 const std::optional<std::string>& response, bool final_node,
                                 std::mt19937_64& rng, const GenerationConfig& config);

// Decodes one utterance from a fixed decoder memory; empty vector if the
// first sampled token is EOS.
std::vector<TokenId> decode_utterance(const Model& model, const std::vector<PooledVec>& memory,
                                      std::mt19937_64& rng, const GenerationConfig& config);

Dialogue generate_dialogue(const Model& model, const Flowchart& chart, const FlowPath& path,
                           std::uint64_t seed, const GenerationConfig& config,
                           const std::string& dialogue_id = "syn-0",
                           const std::string& checkpoint_hash = {});

// Independent per-dialogue seed stream derived from (base seed, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

struct AugmentManifest {
  std::string checkpoint_hash;
  std::size_t factor = 1;
  std::size_t base_size = 0;
  std::size_t generated = 0;
  std::map<std::string, std::size_t> per_path_counts;  // "<chart>::<path key>" -> count

  std::string to_json() const;
};

struct AugmentResult {
  Corpus corpus;
  AugmentManifest manifest;
};

// (factor - 1) * base_size synthetic dialogues, paths taken round-robin over
// every enumerated path of every chart (charts in id order).
AugmentResult augment(const Model& model, const ChartMap& charts, std::size_t base_size,
                      const GenerationConfig& config, const std::string& checkpoint_hash = {});

}  // namespace flowplan
