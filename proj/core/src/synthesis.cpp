#include "flowplan/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "flowplan/errors.hpp"
#include "flowplan/globalplan.hpp"
#include "flowplan/localplan.hpp"
#include "flowplan/log.hpp"
#include "flowplan/tokenizer.hpp"
#include "flowplan/training.hpp"

namespace flowplan {

void GenerationConfig::validate() const {
  if (!(act_temperature > 0.0) || !(token_temperature > 0.0))
    throw ValidationError("generation: temperatures must be positive");
  if (max_utterances == 0) throw ValidationError("generation: max_utterances must be >= 1");
  if (max_tokens < 3) throw ValidationError("generation: max_tokens must be >= 3");
  if (top_k == 0) throw ValidationError("generation: top_k must be >= 1");
  if (factor == 0) throw ValidationError("generation: factor must be >= 1");
}

GenerationConfig GenerationConfig::greedy() {
  GenerationConfig c;
  c.act_decoding = ActDecoding::greedy;
  c.token_decoding = TokenDecoding::greedy;
  return c;
}

Speaker speaker_for(DialogueAct act, const GenerationConfig& config) {
  if (auto it = config.speaker_overrides.find(act); it != config.speaker_overrides.end())
    return it->second;
  switch (act) {
    case DialogueAct::yes_no_question:
    case DialogueAct::suggestion:
      return Speaker::agent;
    default:
      return Speaker::user;
  }
}

namespace {

std::vector<double> standard_normal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(n);
  for (double& e : eps) e = normal(rng);
  return eps;
}

// Index drawn from unnormalized log-weights at the given temperature.
std::size_t sample_index(const std::vector<double>& log_weights, double temperature,
                         std::mt19937_64& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) mx = std::max(mx, w);
  std::vector<double> p(log_weights.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::isfinite(log_weights[i]) ? std::exp((log_weights[i] - mx) / temperature) : 0.0;
    z += p[i];
  }
  std::uniform_real_distribution<double> u(0.0, z);
  double r = u(rng);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (r < p[i]) return i;
    r -= p[i];
  }
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return i;
  return 0;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool should_stop(const std::vector<DialogueAct>& acts, bool final_node,
                 const TerminationRule& rule) {
  const DialogueAct last = acts.back();
  if (final_node) return rule.action_terminal.count(last) > 0;
  if (!rule.decision_terminal.count(last)) return false;
  if (!rule.require_question) return true;
  return std::find(acts.begin(), acts.end() - 1, DialogueAct::yes_no_question) != acts.end() - 1;
}

}  // namespace

std::vector<TokenId> decode_utterance(const Model& model, const std::vector<PooledVec>& memory,
                                      std::mt19937_64& rng, const GenerationConfig& config) {
  ag::NoGradGuard guard;
  const std::size_t cap = std::min(config.max_tokens, model.config().backbone.max_len);
  std::vector<TokenId> prefix{Vocabulary::kBos};
  const double neg_inf = -std::numeric_limits<double>::infinity();
  while (true) {
    if (prefix.size() + 1 >= cap) {
      prefix.push_back(Vocabulary::kEos);
      break;
    }
    ag::Tensor lp = model.backbone().decode_log_probs(memory, prefix, nn::Context::eval());
    const std::size_t v = lp.cols();
    const std::size_t last = lp.rows() - 1;
    std::vector<double> scores(v);
    for (std::size_t j = 0; j < v; ++j) {
      const auto id = static_cast<TokenId>(j);
      const bool allowed = id == Vocabulary::kEos || !Vocabulary::is_special(id);
      scores[j] = allowed ? lp.at(last, j) : neg_inf;
    }
    std::size_t next = 0;
    switch (config.token_decoding) {
      case TokenDecoding::greedy:
        next = argmax(scores);
        break;
      case TokenDecoding::sample:
        next = sample_index(scores, config.token_temperature, rng);
        break;
      case TokenDecoding::top_k: {
        std::vector<std::size_t> order(v);
        std::iota(order.begin(), order.end(), 0);
        const std::size_t k = std::min(config.top_k, v);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.end(), [&](std::size_t a, std::size_t b) {
                            return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                          });
        std::vector<double> kept(v, neg_inf);
        for (std::size_t i = 0; i < k; ++i) kept[order[i]] = scores[order[i]];
        next = sample_index(kept, config.token_temperature, rng);
        break;
      }
    }
    prefix.push_back(static_cast<TokenId>(next));
    if (static_cast<TokenId>(next) == Vocabulary::kEos) break;
  }
  if (prefix.size() == 2) return {};
  return prefix;
}

NodeGeneration generate_for_node(const Model& model, const FlowNode& node,
                                 const std::optional<std::string>& response, bool final_node,
                                 std::mt19937_64& rng, const GenerationConfig& config) {
  ag::NoGradGuard guard;
  const nn::Context ctx = nn::Context::eval();
  NodeGeneration out;
  out.sub_dialogue.node_id = node.id;

  const PooledVec h_x = encode_pooled(model, node_tokens(model, node, response), ctx);
  const GaussianParams global_prior = prior_global(model, h_x);
  const ag::Tensor z_a = sample_reparam(global_prior, standard_normal(model.d_z(), rng));

  std::vector<DialogueAct> acts;
  std::optional<DialogueAct> prev_act;
  PooledVec prev_utt = model.backbone().sentinel();
  while (acts.size() < config.max_utterances) {
    auto probs = act_step(model, prev_act, h_x, z_a);
    std::vector<double> logp(kNumActs);
    for (std::size_t k = 0; k < kNumActs; ++k) logp[k] = std::log(probs[k]);
    const std::size_t a = config.act_decoding == ActDecoding::greedy
                              ? argmax(logp)
                              : sample_index(logp, config.act_temperature, rng);
    const auto act = static_cast<DialogueAct>(a);
    acts.push_back(act);

    const PooledVec h_a = encode_act_pooled(model, act, ctx);
    const GaussianParams local_prior = prior_local(model, h_x, h_a);
    const ag::Tensor z_y = sample_reparam(local_prior, standard_normal(model.d_z(), rng));
    const auto memory = decoder_memory(model, prev_utt, h_x, make_plan_vector(h_a, z_y));

    std::vector<TokenId> tokens = decode_utterance(model, memory, rng, config);
    if (tokens.empty()) tokens = decode_utterance(model, memory, rng, config);
    if (tokens.empty()) {
      // Second degenerate decode: keep the node grounded with its own text.
      out.fallback = true;
      out.sub_dialogue.utterances.push_back(
          {speaker_for(DialogueAct::inform, config), node.text, DialogueAct::inform});
      acts.back() = DialogueAct::inform;
      tokens = tokenize(node.text, model.vocab(), model.config().backbone.max_len);
    } else {
      out.sub_dialogue.utterances.push_back(
          {speaker_for(act, config), detokenize(tokens, model.vocab()), act});
    }
    prev_utt = encode_pooled(model, tokens, ctx);
    prev_act = acts.back();
    if (should_stop(acts, final_node, config.termination)) break;
  }
  return out;
}

Dialogue generate_dialogue(const Model& model, const Flowchart& chart, const FlowPath& path,
                           std::uint64_t seed, const GenerationConfig& config,
                           const std::string& dialogue_id, const std::string& checkpoint_hash) {
  config.validate();
  validate_path(path, chart);
  std::mt19937_64 rng(seed);
  Dialogue d;
  d.id = dialogue_id;
  d.flowchart_id = chart.id();
  SyntheticMeta meta;
  meta.source_path_key = path.key();
  meta.seed = seed;
  meta.checkpoint_hash = checkpoint_hash;
  for (std::size_t i = 0; i < path.steps.size(); ++i) {
    const PathStep& step = path.steps[i];
    NodeGeneration g = generate_for_node(model, chart.node(step.node_id), step.response,
                                         i + 1 == path.steps.size(), rng, config);
    if (g.fallback) meta.fallback_nodes.push_back(i);
    d.sub_dialogues.push_back(std::move(g.sub_dialogue));
  }
  d.synthetic = std::move(meta);
  return d;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string AugmentManifest::to_json() const {
  nlohmann::json doc{{"checkpoint_hash", checkpoint_hash},
                     {"factor", factor},
                     {"base_size", base_size},
                     {"generated", generated},
                     {"per_path_counts", per_path_counts}};
  return doc.dump(2);
}

AugmentResult augment(const Model& model, const ChartMap& charts, std::size_t base_size,
                      const GenerationConfig& config, const std::string& checkpoint_hash) {
  config.validate();
  if (charts.empty()) throw ValidationError("augment: no charts");
  std::vector<std::pair<const Flowchart*, FlowPath>> paths;
  for (const auto& [id, chart] : charts)
    for (auto& p : enumerate_paths(chart)) paths.emplace_back(&chart, std::move(p));

  const std::size_t count = (config.factor - 1) * base_size;
  std::vector<Dialogue> out(count);
  const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, count));
  auto work = [&](std::size_t worker) {
    for (std::size_t k = worker; k < count; k += threads) {
      const auto& [chart, path] = paths[k % paths.size()];
      out[k] = generate_dialogue(model, *chart, path, derive_seed(config.seed, k), config,
                                 "syn-" + std::to_string(k), checkpoint_hash);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }

  AugmentResult result;
  result.corpus.provenance = Provenance::synthetic;
  result.manifest.checkpoint_hash = checkpoint_hash;
  result.manifest.factor = config.factor;
  result.manifest.base_size = base_size;
  result.manifest.generated = count;
  for (const auto& [chart, path] : paths) result.manifest.per_path_counts[chart->id() + "::" + path.key()] = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const auto& [chart, path] = paths[k % paths.size()];
    ++result.manifest.per_path_counts[chart->id() + "::" + path.key()];
    result.corpus.add(std::move(out[k]));
  }
  log::info("generated ", count, " synthetic dialogues over ", paths.size(), " paths");
  return result;
}

}  // namespace flowplan
