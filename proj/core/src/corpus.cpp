#include "flowplan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>

#include <json.hpp>

#include "flowplan/errors.hpp"
#include "flowplan/log.hpp"
#include "flowplan/tokenizer.hpp"

namespace flowplan {

using nlohmann::json;

std::string_view to_string(DialogueAct act) {
  switch (act) {
    case DialogueAct::statement: return "statement";
    case DialogueAct::inform: return "inform";
    case DialogueAct::yes_no_question: return "yes_no_question";
    case DialogueAct::clarification: return "clarification";
    case DialogueAct::thanking: return "thanking";
    case DialogueAct::closing: return "closing";
    case DialogueAct::suggestion: return "suggestion";
  }
  return "inform";
}

std::optional<DialogueAct> parse_act(std::string_view label) {
  std::string norm;
  norm.reserve(label.size());
  for (char c : label) {
    if (c == '-' || c == ' ') {
      norm += '_';
    } else {
      norm += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  for (DialogueAct act : kAllActs)
    if (to_string(act) == norm) return act;
  return std::nullopt;
}

std::string_view to_string(Speaker speaker) {
  return speaker == Speaker::user ? "user" : "agent";
}

std::optional<Speaker> parse_speaker(std::string_view label) {
  if (label == "user") return Speaker::user;
  if (label == "agent") return Speaker::agent;
  return std::nullopt;
}

std::vector<std::string> Dialogue::node_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : sub_dialogues) ids.push_back(s.node_id);
  return ids;
}

std::size_t Dialogue::utterance_count() const {
  std::size_t n = 0;
  for (const auto& s : sub_dialogues) n += s.utterances.size();
  return n;
}

void Corpus::add(Dialogue dialogue) {
  flowchart_ids.insert(dialogue.flowchart_id);
  dialogues.push_back(std::move(dialogue));
}

const Flowchart& chart_for(const Dialogue& dialogue, const ChartMap& charts) {
  auto it = charts.find(dialogue.flowchart_id);
  if (it == charts.end())
    throw ValidationError("dialogue '" + dialogue.id + "': unknown flowchart '" +
                          dialogue.flowchart_id + "'");
  return it->second;
}

FlowPath path_for_dialogue(const Dialogue& dialogue, const Flowchart& chart) {
  if (dialogue.flowchart_id != chart.id())
    throw ValidationError("dialogue '" + dialogue.id + "' is grounded on '" +
                          dialogue.flowchart_id + "', not '" + chart.id() + "'");
  return path_from_nodes(dialogue.node_ids(), chart);
}

void validate_dialogue_shape(const Dialogue& dialogue, const CorpusOptions& options) {
  if (dialogue.id.empty()) throw ValidationError("dialogue with empty id");
  if (dialogue.flowchart_id.empty())
    throw ValidationError("dialogue '" + dialogue.id + "': empty flowchart_id");
  if (dialogue.sub_dialogues.empty())
    throw ValidationError("dialogue '" + dialogue.id + "': no sub-dialogues");
  for (const auto& sub : dialogue.sub_dialogues) {
    if (sub.node_id.empty())
      throw ValidationError("dialogue '" + dialogue.id + "': sub-dialogue with empty node_id");
    if (sub.utterances.empty())
      throw ValidationError("dialogue '" + dialogue.id + "': empty sub-dialogue at node '" +
                            sub.node_id + "'");
    for (const auto& u : sub.utterances) {
      if (u.text.empty())
        throw ValidationError("dialogue '" + dialogue.id + "': empty utterance text");
      if (normalize_tokens(u.text).size() > options.max_utterance_len)
        throw ValidationError("dialogue '" + dialogue.id + "': utterance exceeds " +
                              std::to_string(options.max_utterance_len) + " tokens");
    }
  }
}

namespace {

std::string get_string(const json& obj, const char* field, const std::string& what) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string())
    throw ValidationError(what + ": field '" + field + "' must be a string");
  return it->get<std::string>();
}

Dialogue parse_dialogue(const json& doc, const CorpusOptions& options) {
  if (!doc.is_object()) throw ValidationError("dialogue must be a JSON object");
  Dialogue d;
  d.id = get_string(doc, "id", "dialogue");
  const std::string what = "dialogue '" + d.id + "'";
  d.flowchart_id = get_string(doc, "flowchart_id", what);
  auto subs = doc.find("sub_dialogues");
  if (subs == doc.end() || !subs->is_array())
    throw ValidationError(what + ": 'sub_dialogues' must be an array");
  for (const auto& s : *subs) {
    if (!s.is_object()) throw ValidationError(what + ": sub-dialogue must be an object");
    SubDialogue sub;
    sub.node_id = get_string(s, "node_id", what);
    auto utts = s.find("utterances");
    if (utts == s.end() || !utts->is_array())
      throw ValidationError(what + ": 'utterances' must be an array");
    for (const auto& u : *utts) {
      if (!u.is_object()) throw ValidationError(what + ": utterance must be an object");
      Utterance utt;
      const std::string speaker = get_string(u, "speaker", what);
      auto sp = parse_speaker(speaker);
      if (!sp) throw ValidationError(what + ": unknown speaker '" + speaker + "'");
      utt.speaker = *sp;
      utt.text = get_string(u, "text", what);
      const std::string label = get_string(u, "act", what);
      auto act = parse_act(label);
      if (!act) throw ValidationError(what + ": unknown act label '" + label + "'");
      utt.act = *act;
      auto tokens = normalize_tokens(utt.text);
      if (tokens.size() > options.max_utterance_len) {
        log::warn(what, ": truncating utterance of ", tokens.size(), " tokens to ",
                  options.max_utterance_len);
        tokens.resize(options.max_utterance_len);
        std::string joined;
        for (const auto& t : tokens) {
          if (!joined.empty()) joined += ' ';
          joined += t;
        }
        utt.text = joined;
      }
      sub.utterances.push_back(std::move(utt));
    }
    d.sub_dialogues.push_back(std::move(sub));
  }
  if (doc.value("provenance", std::string("human")) == "synthetic") {
    SyntheticMeta meta;
    meta.source_path_key = doc.value("source_path_key", std::string());
    meta.seed = doc.value("seed", std::uint64_t{0});
    meta.checkpoint_hash = doc.value("checkpoint_hash", std::string());
    if (auto fb = doc.find("fallback_nodes"); fb != doc.end() && fb->is_array())
      meta.fallback_nodes = fb->get<std::vector<std::size_t>>();
    d.synthetic = std::move(meta);
  } else if (doc.contains("provenance") && doc["provenance"] != "human") {
    throw ValidationError(what + ": provenance must be human or synthetic");
  }
  validate_dialogue_shape(d, options);
  return d;
}

void warn_speaker_repeats(const Dialogue& d) {
  for (const auto& sub : d.sub_dialogues) {
    for (std::size_t j = 1; j < sub.utterances.size(); ++j) {
      if (sub.utterances[j].speaker == sub.utterances[j - 1].speaker) {
        log::warn("dialogue '", d.id, "': consecutive ", to_string(sub.utterances[j].speaker),
                   " utterances at node '", sub.node_id, "'");
        return;
      }
    }
  }
}

}  // namespace

Corpus load_corpus(std::istream& in, const ChartMap& charts, const CorpusOptions& options) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  bool all_synthetic = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    try {
      json doc = json::parse(line);
      Dialogue d = parse_dialogue(doc, options);
      const Flowchart& chart = chart_for(d, charts);
      path_for_dialogue(d, chart);
      for (const auto& sub : d.sub_dialogues) chart.node(sub.node_id);
      if (!ids.insert(d.id).second) throw ValidationError("duplicate dialogue id '" + d.id + "'");
      if (options.warn_on_speaker_repeat) warn_speaker_repeats(d);
      all_synthetic = all_synthetic && d.synthetic.has_value();
      corpus.add(std::move(d));
    } catch (const json::parse_error& e) {
      throw LineError(line_no, std::string("invalid JSON: ") + e.what());
    } catch (const LineError&) {
      throw;
    } catch (const ValidationError& e) {
      throw LineError(line_no, e.what());
    }
  }
  corpus.provenance =
      (!corpus.empty() && all_synthetic) ? Provenance::synthetic : Provenance::human;
  return corpus;
}

Corpus load_corpus_file(const std::string& path, const ChartMap& charts,
                        const CorpusOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file '" + path + "'");
  try {
    return load_corpus(in, charts, options);
  } catch (const LineError& e) {
    throw LineError(e.line(), path + ": " + e.what());
  }
}

std::string dialogue_to_json_line(const Dialogue& d) {
  json doc;
  doc["id"] = d.id;
  doc["flowchart_id"] = d.flowchart_id;
  doc["sub_dialogues"] = json::array();
  for (const auto& sub : d.sub_dialogues) {
    json s;
    s["node_id"] = sub.node_id;
    s["utterances"] = json::array();
    for (const auto& u : sub.utterances)
      s["utterances"].push_back({{"speaker", std::string(to_string(u.speaker))},
                                 {"text", u.text},
                                 {"act", std::string(to_string(u.act))}});
    doc["sub_dialogues"].push_back(std::move(s));
  }
  if (d.synthetic) {
    doc["provenance"] = "synthetic";
    doc["source_path_key"] = d.synthetic->source_path_key;
    doc["seed"] = d.synthetic->seed;
    doc["checkpoint_hash"] = d.synthetic->checkpoint_hash;
    doc["fallback_nodes"] = d.synthetic->fallback_nodes;
  }
  return doc.dump();
}

void save_corpus(const Corpus& corpus, std::ostream& out) {
  for (const auto& d : corpus.dialogues) out << dialogue_to_json_line(d) << '\n';
}

std::map<DialogueAct, double> act_distribution(const Corpus& corpus) {
  std::array<std::size_t, kNumActs> counts{};
  std::size_t total = 0;
  for (const auto& d : corpus.dialogues)
    for (const auto& sub : d.sub_dialogues)
      for (const auto& u : sub.utterances) {
        ++counts[static_cast<std::size_t>(u.act)];
        ++total;
      }
  if (total == 0) throw ValidationError("act distribution of an empty corpus");
  std::map<DialogueAct, double> dist;
  for (DialogueAct act : kAllActs)
    dist[act] = static_cast<double>(counts[static_cast<std::size_t>(act)]) /
                static_cast<double>(total);
  return dist;
}

namespace {

Corpus empty_like(const Corpus& corpus) {
  Corpus out;
  out.provenance = corpus.provenance;
  return out;
}

}  // namespace

CorpusSplit split_flowchart_setting(const Corpus& corpus, FlowchartSetting setting,
                                    const SplitOptions& options) {
  CorpusSplit split{empty_like(corpus), empty_like(corpus)};
  if (setting == FlowchartSetting::out_of_flowchart) {
    for (const auto& id : options.test_flowcharts)
      if (!corpus.flowchart_ids.count(id))
        throw ValidationError("configured test flowchart '" + id + "' is absent from the corpus");
    for (const auto& d : corpus.dialogues) {
      (options.test_flowcharts.count(d.flowchart_id) ? split.test : split.train).add(d);
    }
  } else {
    if (!(options.train_ratio > 0.0 && options.train_ratio < 1.0))
      throw ValidationError("in_flowchart train_ratio must lie in (0, 1)");
    std::map<std::string, std::vector<std::size_t>> by_chart;
    for (std::size_t i = 0; i < corpus.dialogues.size(); ++i)
      by_chart[corpus.dialogues[i].flowchart_id].push_back(i);
    std::vector<bool> in_train(corpus.dialogues.size(), false);
    for (auto& [chart_id, members] : by_chart) {
      std::seed_seq seq{options.seed, fnv1a(chart_id)};
      std::mt19937_64 rng(seq);
      std::shuffle(members.begin(), members.end(), rng);
      const auto cut = static_cast<std::size_t>(
          std::llround(options.train_ratio * static_cast<double>(members.size())));
      for (std::size_t k = 0; k < cut; ++k) in_train[members[k]] = true;
    }
    for (std::size_t i = 0; i < corpus.dialogues.size(); ++i)
      (in_train[i] ? split.train : split.test).add(corpus.dialogues[i]);
  }
  if (split.train.empty()) throw ValidationError("empty training split");
  return split;
}

PathSplit split_uncovered_paths(const Corpus& corpus, const ChartMap& charts,
                                double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie in (0, 1)");
  std::vector<std::string> keys(corpus.dialogues.size());
  std::set<std::string> distinct;
  for (std::size_t i = 0; i < corpus.dialogues.size(); ++i) {
    const auto& d = corpus.dialogues[i];
    // Chart id prefix keeps identical node ids in different charts apart.
    keys[i] = d.flowchart_id + "::" + path_for_dialogue(d, chart_for(d, charts)).key();
    distinct.insert(keys[i]);
  }
  if (distinct.size() < 2) throw ValidationError("fewer than 2 distinct paths to split");
  std::vector<std::string> order(distinct.begin(), distinct.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto cut = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(order.size())));
  cut = std::clamp<std::size_t>(cut, 1, order.size() - 1);

  PathSplit split{empty_like(corpus), empty_like(corpus), {}, {}};
  std::set<std::string> covered(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  split.covered_keys.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  split.uncovered_keys.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  for (std::size_t i = 0; i < corpus.dialogues.size(); ++i)
    (covered.count(keys[i]) ? split.covered : split.uncovered).add(corpus.dialogues[i]);
  return split;
}

}  // namespace flowplan
