#include "flowplan/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "flowplan/errors.hpp"
#include "flowplan/log.hpp"
#include "flowplan/tokenizer.hpp"

namespace flowplan::metrics {

namespace {

// N-grams are keyed by their interned token ids packed into a byte string,
// so profiles can be built once and compared many times.
using NgramKey = std::string;
using NgramCounts = std::unordered_map<NgramKey, std::size_t>;

class Interner {
 public:
  std::uint32_t id(const std::string& w) { return ids_.try_emplace(w, ids_.size()).first->second; }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Profile {
  std::size_t length = 0;
  std::array<NgramCounts, 4> counts;  // index n - 1
};

Profile profile(const Tokens& t, Interner& interner) {
  std::vector<std::uint32_t> ids;
  ids.reserve(t.size());
  for (const auto& w : t) ids.push_back(interner.id(w));
  Profile p;
  p.length = t.size();
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t i = 0; i + n <= ids.size(); ++i)
      ++p.counts[n - 1][NgramKey(reinterpret_cast<const char*>(ids.data() + i), n * sizeof(std::uint32_t))];
  return p;
}

// Shared scoring given the candidate profile, a lookup for the clipped
// reference count of each n-gram, and the reference lengths.
template <typename MaxRef>
double bleu_score(const Profile& cand, MaxRef&& max_ref, const std::vector<std::size_t>& ref_lengths) {
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t matched = 0, total = 0;
    for (const auto& [g, c] : cand.counts[n - 1]) {
      matched += std::min(c, max_ref(n, g));
      total += c;
    }
    double p;
    if (matched > 0) {
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }

  const auto c = static_cast<double>(cand.length);
  double r = static_cast<double>(ref_lengths.front());
  for (std::size_t len_i : ref_lengths) {
    const auto len = static_cast<double>(len_i);
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r))
      r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / 4.0), 0.0, 1.0);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a == b && std::any_of(a.begin(), a.end(), [](double x) { return x != 0.0; })) return 1.0;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<const std::vector<double>*> lookup(const Tokens& t, const WordVectors& wv) {
  std::vector<const std::vector<double>*> out;
  for (const auto& w : t)
    if (const auto* v = wv.find(w)) out.push_back(v);
  return out;
}

double greedy_side(const std::vector<const std::vector<double>*>& from,
                   const std::vector<const std::vector<double>*>& to) {
  double total = 0.0;
  for (const auto* a : from) {
    double best = -1.0;
    for (const auto* b : to) best = std::max(best, cosine(*a, *b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double bleu4(const Tokens& candidate, const std::vector<Tokens>& references) {
  if (candidate.empty()) throw ValidationError("bleu4: empty candidate");
  if (references.empty()) throw ValidationError("bleu4: no references");
  for (const auto& r : references)
    if (r.empty()) throw ValidationError("bleu4: empty reference");

  Interner interner;
  const Profile cand = profile(candidate, interner);
  std::vector<Profile> refs;
  std::vector<std::size_t> lengths;
  for (const auto& r : references) {
    refs.push_back(profile(r, interner));
    lengths.push_back(r.size());
  }
  const auto max_ref = [&](std::size_t n, const NgramKey& g) {
    std::size_t best = 0;
    for (const auto& rp : refs)
      if (auto it = rp.counts[n - 1].find(g); it != rp.counts[n - 1].end()) best = std::max(best, it->second);
    return best;
  };
  return bleu_score(cand, max_ref, lengths);
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) throw ValidationError("rouge_l: empty input");
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j)
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const auto lcs = static_cast<double>(prev[n]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(m);
  const double r = lcs / static_cast<double>(n);
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double distinct_n(const std::vector<Tokens>& texts, std::size_t n) {
  if (texts.empty()) throw ValidationError("distinct_n: no texts");
  if (n == 0) throw ValidationError("distinct_n: n must be >= 1");
  Interner interner;
  std::unordered_set<NgramKey> unique;
  std::size_t total = 0;
  std::vector<std::uint32_t> ids;
  for (const auto& t : texts) {
    ids.clear();
    for (const auto& w : t) ids.push_back(interner.id(w));
    for (std::size_t i = 0; i + n <= ids.size(); ++i, ++total)
      unique.emplace(reinterpret_cast<const char*>(ids.data() + i), n * sizeof(std::uint32_t));
  }
  if (total == 0) {
    log::warn("distinct-", n, ": every text is shorter than ", n, " tokens; reporting 0");
    return 0.0;
  }
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double self_bleu(const std::vector<Tokens>& texts) {
  if (texts.size() < 2) throw ValidationError("self_bleu: needs at least 2 texts");
  for (const auto& t : texts)
    if (t.empty()) throw ValidationError("self_bleu: empty text");

  Interner interner;
  std::vector<Profile> profiles;
  profiles.reserve(texts.size());
  for (const auto& t : texts) profiles.push_back(profile(t, interner));

  // Highest and second-highest count of each n-gram over all texts, with the
  // owner of the highest, answer "max over every other text" in O(1).
  struct Top2 {
    std::size_t first = 0, second = 0, owner = 0;
  };
  std::array<std::unordered_map<NgramKey, Top2>, 4> top;
  for (std::size_t i = 0; i < profiles.size(); ++i)
    for (std::size_t n = 0; n < 4; ++n)
      for (const auto& [g, c] : profiles[i].counts[n]) {
        Top2& t = top[n][g];
        if (c > t.first) {
          t.second = t.first;
          t.first = c;
          t.owner = i;
        } else if (c > t.second) {
          t.second = c;
        }
      }

  double sum = 0.0;
  std::vector<std::size_t> lengths(texts.size() - 1);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t j = 0, k = 0; j < texts.size(); ++j)
      if (j != i) lengths[k++] = texts[j].size();
    const auto max_ref = [&](std::size_t n, const NgramKey& g) {
      const Top2& t = top[n - 1].at(g);
      return t.owner == i ? t.second : t.first;
    };
    sum += bleu_score(profiles[i], max_ref, lengths);
  }
  return sum / static_cast<double>(texts.size());
}

void WordVectors::add(const std::string& word, std::vector<double> vec) {
  if (vec.empty()) throw ValidationError("word vector for '" + word + "' is empty");
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_)
    throw ValidationError("word vector for '" + word + "' has dimension " +
                          std::to_string(vec.size()) + ", expected " + std::to_string(dim_));
  table_[word] = std::move(vec);
}

const std::vector<double>* WordVectors::find(const std::string& word) const {
  auto it = table_.find(word);
  return it == table_.end() ? nullptr : &it->second;
}

WordVectors WordVectors::load(std::istream& in) {
  WordVectors wv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> vec;
    std::string field;
    while (ss >> field) {
      try {
        std::size_t used = 0;
        vec.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw LineError(line_no, "word vectors: '" + field + "' is not a number");
      }
    }
    try {
      wv.add(word, std::move(vec));
    } catch (const ValidationError& e) {
      throw LineError(line_no, e.what());
    }
  }
  return wv;
}

WordVectors WordVectors::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open word vectors '" + path + "'");
  return load(in);
}

std::optional<EmbeddingScores> embedding_metrics(const Tokens& candidate, const Tokens& reference,
                                                 const WordVectors& vectors) {
  const auto c = lookup(candidate, vectors);
  const auto r = lookup(reference, vectors);
  if (c.empty() || r.empty()) return std::nullopt;
  const std::size_t d = vectors.dim();

  auto mean = [d](const std::vector<const std::vector<double>*>& vs) {
    std::vector<double> out(d, 0.0);
    for (const auto* v : vs)
      for (std::size_t k = 0; k < d; ++k) out[k] += (*v)[k];
    for (double& x : out) x /= static_cast<double>(vs.size());
    return out;
  };
  auto extrema = [d](const std::vector<const std::vector<double>*>& vs) {
    std::vector<double> out(d, 0.0);
    for (const auto* v : vs)
      for (std::size_t k = 0; k < d; ++k)
        if (std::abs((*v)[k]) > std::abs(out[k])) out[k] = (*v)[k];
    return out;
  };

  EmbeddingScores s;
  s.average = cosine(mean(c), mean(r));
  s.extrema = cosine(extrema(c), extrema(r));
  s.greedy = 0.5 * (greedy_side(c, r) + greedy_side(r, c));
  return s;
}

ExternalScorer command_scorer(const std::string& command) {
  return [command](const std::vector<std::pair<std::string, std::string>>& pairs) {
    namespace fs = std::filesystem;
    const fs::path tmp = fs::temp_directory_path() /
                         ("flowplan-score-" + std::to_string(fnv1a(command + std::to_string(pairs.size()))) + ".jsonl");
    {
      std::ofstream out(tmp);
      for (const auto& [c, r] : pairs)
        out << nlohmann::json{{"candidate", c}, {"reference", r}}.dump() << '\n';
    }
    const std::string cmd = command + " '" + tmp.string() + "'";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
    if (!pipe) throw std::runtime_error("cannot run external scorer '" + command + "'");
    std::string output;
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe.get())) output.append(buf.data(), n);
    const int status = pclose(pipe.release());
    fs::remove(tmp);
    if (status != 0) throw std::runtime_error("external scorer exited with status " + std::to_string(status));
    std::vector<double> scores;
    std::istringstream ss(output);
    double v;
    while (ss >> v) scores.push_back(v);
    if (scores.size() != pairs.size())
      throw std::runtime_error("external scorer returned " + std::to_string(scores.size()) +
                               " scores for " + std::to_string(pairs.size()) + " pairs");
    return scores;
  };
}

std::vector<Tokens> dialogue_units(const Dialogue& dialogue, Granularity granularity) {
  std::vector<Tokens> out;
  if (granularity == Granularity::dialogue) {
    Tokens all;
    for (const auto& sub : dialogue.sub_dialogues)
      for (const auto& u : sub.utterances) {
        auto t = normalize_tokens(u.text);
        all.insert(all.end(), t.begin(), t.end());
      }
    out.push_back(std::move(all));
  } else {
    for (const auto& sub : dialogue.sub_dialogues)
      for (const auto& u : sub.utterances) out.push_back(normalize_tokens(u.text));
  }
  return out;
}

std::optional<std::string> alignment_key(const Dialogue& dialogue, const ChartMap& charts) {
  if (dialogue.synthetic && !dialogue.synthetic->source_path_key.empty())
    return dialogue.flowchart_id + "::" + dialogue.synthetic->source_path_key;
  auto it = charts.find(dialogue.flowchart_id);
  if (it == charts.end()) return std::nullopt;
  try {
    return dialogue.flowchart_id + "::" + path_for_dialogue(dialogue, it->second).key();
  } catch (const ValidationError&) {
    return std::nullopt;
  }
}

namespace {

std::string join(const Tokens& t) {
  std::string s;
  for (const auto& w : t) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

struct ScoredItem {
  Tokens candidate;
  std::vector<Tokens> references;
};

}  // namespace

MetricReport report(const Corpus& candidates, const Corpus& references, const ChartMap& charts,
                    const ReportOptions& options) {
  MetricReport rep;
  rep.external_name = options.external_name;
  rep.candidates = candidates.size();

  // Reference units per path key; at utterance level also per node position.
  std::map<std::string, std::vector<const Dialogue*>> by_key;
  for (const auto& d : references.dialogues)
    if (auto k = alignment_key(d, charts)) by_key[*k].push_back(&d);

  std::vector<Tokens> diversity_units;
  std::vector<ScoredItem> items;
  for (const auto& cand : candidates.dialogues) {
    for (auto& u : dialogue_units(cand, options.granularity))
      if (!u.empty()) diversity_units.push_back(u);
    const auto key = alignment_key(cand, charts);
    if (!key) continue;
    auto it = by_key.find(*key);
    if (it == by_key.end()) continue;
    if (options.granularity == Granularity::dialogue) {
      ScoredItem item{dialogue_units(cand, Granularity::dialogue).front(), {}};
      for (const auto* ref : it->second) {
        auto t = dialogue_units(*ref, Granularity::dialogue).front();
        if (!t.empty()) item.references.push_back(std::move(t));
      }
      if (!item.candidate.empty() && !item.references.empty()) items.push_back(std::move(item));
    } else {
      for (std::size_t node = 0; node < cand.sub_dialogues.size(); ++node) {
        std::vector<Tokens> refs;
        for (const auto* ref : it->second)
          if (node < ref->sub_dialogues.size())
            for (const auto& u : ref->sub_dialogues[node].utterances)
              if (auto t = normalize_tokens(u.text); !t.empty()) refs.push_back(std::move(t));
        if (refs.empty()) continue;
        for (const auto& u : cand.sub_dialogues[node].utterances)
          if (auto t = normalize_tokens(u.text); !t.empty()) items.push_back({std::move(t), refs});
      }
    }
  }

  std::vector<double> bleu, rouge, avg, ext, grd;
  std::vector<std::pair<std::string, std::string>> external_pairs;
  for (const auto& item : items) {
    bleu.push_back(bleu4(item.candidate, item.references));
    double best_rouge = 0.0;
    std::optional<EmbeddingScores> best_emb;
    std::size_t best_ref = 0;
    for (std::size_t r = 0; r < item.references.size(); ++r) {
      const double rl = rouge_l(item.candidate, item.references[r], options.rouge_beta);
      if (rl > best_rouge) {
        best_rouge = rl;
        best_ref = r;
      }
      if (options.vectors) {
        if (auto e = embedding_metrics(item.candidate, item.references[r], *options.vectors)) {
          if (!best_emb) {
            best_emb = e;
          } else {
            best_emb->average = std::max(best_emb->average, e->average);
            best_emb->extrema = std::max(best_emb->extrema, e->extrema);
            best_emb->greedy = std::max(best_emb->greedy, e->greedy);
          }
        }
      }
    }
    rouge.push_back(best_rouge);
    if (best_emb) {
      avg.push_back(best_emb->average);
      ext.push_back(best_emb->extrema);
      grd.push_back(best_emb->greedy);
    }
    if (options.external) external_pairs.emplace_back(join(item.candidate), join(item.references[best_ref]));
  }

  rep.aligned = items.size();
  rep.embedding_items = avg.size();
  rep.bleu4 = mean_of(bleu);
  rep.rouge_l = mean_of(rouge);
  rep.emb_average = mean_of(avg);
  rep.emb_extrema = mean_of(ext);
  rep.emb_greedy = mean_of(grd);
  if (options.external && !external_pairs.empty()) rep.external = mean_of(options.external(external_pairs));

  if (!diversity_units.empty()) {
    rep.distinct_2 = distinct_n(diversity_units, 2);
    rep.distinct_3 = distinct_n(diversity_units, 3);
  }
  if (diversity_units.size() >= 2) rep.self_bleu = self_bleu(diversity_units);
  return rep;
}

std::string MetricReport::to_table() const {
  auto fmt = [](const std::optional<double>& v, double scale) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v * scale);
    return std::string(buf);
  };
  std::ostringstream out;
  auto row = [&out](const std::string& name, const std::string& value) {
    out << name << std::string(name.size() < 14 ? 14 - name.size() : 1, ' ') << value << '\n';
  };
  row("metric", "value");
  row("BLEU-4", fmt(bleu4, 100.0));
  row("ROUGE-L", fmt(rouge_l, 1.0));
  row("Distinct-2", fmt(distinct_2, 1.0));
  row("Distinct-3", fmt(distinct_3, 1.0));
  row("Self-BLEU", fmt(self_bleu, 1.0));
  row("Emb-Average", fmt(emb_average, 1.0));
  row("Emb-Extrema", fmt(emb_extrema, 1.0));
  row("Emb-Greedy", fmt(emb_greedy, 1.0));
  if (external) row(external_name, fmt(external, 1.0));
  row("candidates", std::to_string(candidates));
  row("aligned", std::to_string(aligned));
  return out.str();
}

std::string MetricReport::to_json_line() const {
  nlohmann::json j;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("bleu4", bleu4);
  put("rouge_l", rouge_l);
  j["distinct_2"] = distinct_2;
  j["distinct_3"] = distinct_3;
  put("self_bleu", self_bleu);
  put("emb_average", emb_average);
  put("emb_extrema", emb_extrema);
  put("emb_greedy", emb_greedy);
  if (external) j[external_name] = *external;
  j["candidates"] = candidates;
  j["aligned"] = aligned;
  j["embedding_items"] = embedding_items;
  return j.dump();
}

}  // namespace flowplan::metrics
