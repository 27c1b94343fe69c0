#pragma once

#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowplan/corpus.hpp"

namespace flowplan::metrics {

using Tokens = std::vector<std::string>;

// Modified n-gram precision for n = 1..4 with clipping against the maximum
// count in any reference. A zero match count at n >= 2 becomes
// 1 / (total + 1). Brevity penalty uses the closest reference length, ties
// resolved to the shorter one.
double bleu4(const Tokens& candidate, const std::vector<Tokens>& references);

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);

// Unique over total n-grams across all texts. Zero, with a warning, when no
// text has n tokens.
double distinct_n(const std::vector<Tokens>& texts, std::size_t n);

// Mean BLEU-4 of each text against all others as references.
double self_bleu(const std::vector<Tokens>& texts);

class WordVectors {
 public:
  WordVectors() = default;
  explicit WordVectors(std::size_t dim) : dim_(dim) {}

  // One "word v1 v2 ..." record per line; blank lines skipped.
  static WordVectors load(std::istream& in);
  static WordVectors load_file(const std::string& path);

  void add(const std::string& word, std::vector<double> vec);
  const std::vector<double>* find(const std::string& word) const;
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return table_.size(); }
  bool empty() const noexcept { return table_.empty(); }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

struct EmbeddingScores {
  double average = 0.0;
  double extrema = 0.0;
  double greedy = 0.0;
};

// nullopt when every token on either side is out of vocabulary.
std::optional<EmbeddingScores> embedding_metrics(const Tokens& candidate, const Tokens& reference,
                                                 const WordVectors& vectors);

enum class Granularity { dialogue, utterance };

// Optional external scorer (e.g. a model-based metric run out of process):
// receives (candidate, reference) text pairs, returns one score per pair.
using ExternalScorer =
    std::function<std::vector<double>(const std::vector<std::pair<std::string, std::string>>&)>;

// Runs `command`, writing one JSON object {"candidate","reference"} per line
// to a temporary file passed as its only argument, and reads one number per
// line from its standard output.
ExternalScorer command_scorer(const std::string& command);

struct ReportOptions {
  Granularity granularity = Granularity::dialogue;
  double rouge_beta = 1.2;
  const WordVectors* vectors = nullptr;
  ExternalScorer external;
  std::string external_name = "external";
};

struct MetricReport {
  std::optional<double> bleu4;
  std::optional<double> rouge_l;
  double distinct_2 = 0.0;
  double distinct_3 = 0.0;
  std::optional<double> self_bleu;
  std::optional<double> emb_average;
  std::optional<double> emb_extrema;
  std::optional<double> emb_greedy;
  std::optional<double> external;
  std::string external_name = "external";

  std::size_t candidates = 0;
  std::size_t aligned = 0;           // items scored against at least one reference
  std::size_t embedding_items = 0;   // items with a defined embedding triple

  std::string to_table() const;       // BLEU-4 shown x100
  std::string to_json_line() const;
};

// Text units of a dialogue at the requested granularity, normalized.
std::vector<Tokens> dialogue_units(const Dialogue& dialogue, Granularity granularity);

// Path key "<chart>::<path key>" used for alignment. Synthetic dialogues use
// their recorded source path; others are resolved against `charts`.
std::optional<std::string> alignment_key(const Dialogue& dialogue, const ChartMap& charts);

// Candidates align to references sharing a path key. Dialogue level: each
// candidate dialogue against all aligned reference dialogues. Utterance level:
// each candidate utterance against the aligned utterances of the same node
// position. BLEU is multi-reference; ROUGE-L and embedding scores take the
// best reference. Aggregates are means over scored items.
MetricReport report(const Corpus& candidates, const Corpus& references, const ChartMap& charts,
                    const ReportOptions& options = {});

}  // namespace flowplan::metrics
