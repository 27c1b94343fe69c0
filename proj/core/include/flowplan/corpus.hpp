#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "flowplan/flowgraph.hpp"

namespace flowplan {

enum class DialogueAct : std::uint8_t {
  statement,
  inform,
  yes_no_question,
  clarification,
  thanking,
  closing,
  suggestion,
};

inline constexpr std::size_t kNumActs = 7;
inline constexpr std::array<DialogueAct, kNumActs> kAllActs{
    DialogueAct::statement, DialogueAct::inform,  DialogueAct::yes_no_question,
    DialogueAct::clarification, DialogueAct::thanking, DialogueAct::closing,
    DialogueAct::suggestion};

std::string_view to_string(DialogueAct act);
// Lower-cases and unifies '-'/' ' to '_' before matching; nullopt if unknown.
std::optional<DialogueAct> parse_act(std::string_view label);

enum class Speaker : std::uint8_t { user, agent };

std::string_view to_string(Speaker speaker);
std::optional<Speaker> parse_speaker(std::string_view label);

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;
  DialogueAct act = DialogueAct::inform;

  bool operator==(const Utterance&) const = default;
};

struct SubDialogue {
  std::string node_id;
  std::vector<Utterance> utterances;

  bool operator==(const SubDialogue&) const = default;
};

enum class Provenance : std::uint8_t { human, synthetic };

struct SyntheticMeta {
  std::string source_path_key;
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  // Node indices whose decoding degenerated and fell back to the node text.
  std::vector<std::size_t> fallback_nodes;

  bool operator==(const SyntheticMeta&) const = default;
};

struct Dialogue {
  std::string id;
  std::string flowchart_id;
  std::vector<SubDialogue> sub_dialogues;
  std::optional<SyntheticMeta> synthetic;

  std::vector<std::string> node_ids() const;
  std::size_t utterance_count() const;

  bool operator==(const Dialogue&) const = default;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::set<std::string> flowchart_ids;
  Provenance provenance = Provenance::human;

  bool empty() const noexcept { return dialogues.empty(); }
  std::size_t size() const noexcept { return dialogues.size(); }
  void add(Dialogue dialogue);

  bool operator==(const Corpus&) const = default;
};

using ChartMap = std::map<std::string, Flowchart>;

struct CorpusOptions {
  std::size_t max_utterance_len = 64;  // tokens; longer utterances are truncated with a warning
  bool warn_on_speaker_repeat = true;
};

// One dialogue object per line. Errors carry the 1-based line number.
Corpus load_corpus(std::istream& in, const ChartMap& charts, const CorpusOptions& options = {});
Corpus load_corpus_file(const std::string& path, const ChartMap& charts,
                        const CorpusOptions& options = {});
void save_corpus(const Corpus& corpus, std::ostream& out);
std::string dialogue_to_json_line(const Dialogue& dialogue);

// Structural checks that do not need a chart (non-empty ids and sub-dialogues).
void validate_dialogue_shape(const Dialogue& dialogue, const CorpusOptions& options = {});

FlowPath path_for_dialogue(const Dialogue& dialogue, const Flowchart& chart);
const Flowchart& chart_for(const Dialogue& dialogue, const ChartMap& charts);

std::map<DialogueAct, double> act_distribution(const Corpus& corpus);

enum class FlowchartSetting { in_flowchart, out_of_flowchart };

struct SplitOptions {
  // out_of_flowchart: dialogues of these flowcharts form the test side.
  std::set<std::string> test_flowcharts{"engine", "wireless"};
  // in_flowchart: fraction of each flowchart's dialogues kept for training.
  double train_ratio = 0.8;
  std::uint64_t seed = 7;
};

struct CorpusSplit {
  Corpus train;
  Corpus test;
};

CorpusSplit split_flowchart_setting(const Corpus& corpus, FlowchartSetting setting,
                                    const SplitOptions& options = {});

struct PathSplit {
  Corpus covered;
  Corpus uncovered;
  std::vector<std::string> covered_keys;
  std::vector<std::string> uncovered_keys;
};

// Partitions by distinct path key so dialogues sharing a path stay together.
PathSplit split_uncovered_paths(const Corpus& corpus, const ChartMap& charts,
                                double train_fraction, std::uint64_t seed);

}  // namespace flowplan
