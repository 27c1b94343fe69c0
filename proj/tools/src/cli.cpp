#include "flowplan/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowplan/checkpoint.hpp"
#include "flowplan/corpus.hpp"
#include "flowplan/errors.hpp"
#include "flowplan/flowgraph.hpp"
#include "flowplan/log.hpp"
#include "flowplan/metrics.hpp"
#include "flowplan/synthesis.hpp"
#include "flowplan/toy.hpp"
#include "flowplan/training.hpp"

namespace flowplan::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct ChartArgs {
  std::vector<std::string> files;
  std::string dir;
};

void add_chart_flags(CLI::App* cmd, ChartArgs& args) {
  cmd->add_option("--flowchart", args.files, "Flowchart JSON file (repeatable)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--flowcharts", args.dir, "Directory of flowchart JSON files")
      ->check(CLI::ExistingDirectory);
}

ChartMap load_charts(const ChartArgs& args, bool required = true) {
  ChartMap charts;
  if (!args.dir.empty()) charts = load_flowchart_dir(args.dir);
  for (const auto& f : args.files) {
    Flowchart c = load_flowchart_file(f);
    const std::string id = c.id();
    if (!charts.emplace(id, std::move(c)).second)
      throw ValidationError("flowchart '" + id + "' given twice");
  }
  if (required && charts.empty()) throw ValidationError("no flowcharts: pass --flowchart or --flowcharts");
  return charts;
}

// Machine output goes to --out (atomically) or standard output.
void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text << std::flush;
  } else {
    write_file_atomic(out_path, text);
  }
}

std::string corpus_text(const Corpus& corpus) {
  std::ostringstream s;
  save_corpus(corpus, s);
  return s.str();
}

// --- paths -----------------------------------------------------------------

struct PathsArgs {
  ChartArgs charts;
  std::string out;
};

int cmd_paths(const PathsArgs& a) {
  const ChartMap charts = load_charts(a.charts);
  std::string text;
  std::size_t count = 0;
  for (const auto& [id, chart] : charts) {
    const auto paths = enumerate_paths(chart);
    for (const auto& p : paths) text += (charts.size() > 1 ? id + "::" : std::string()) + p.key() + '\n';
    log::info(id, ": ", paths.size(), " paths");
    count += paths.size();
  }
  emit(a.out, text);
  std::cerr << count << " paths\n";
  return kOk;
}

// --- coverage --------------------------------------------------------------

struct CoverageArgs {
  ChartArgs charts;
  std::string corpus;
  std::string out;
};

int cmd_coverage(const CoverageArgs& a) {
  const ChartMap charts = load_charts(a.charts);
  const Corpus corpus = load_corpus_file(a.corpus, charts);
  std::map<std::string, std::vector<FlowPath>> seen;
  for (const auto& d : corpus.dialogues)
    seen[d.flowchart_id].push_back(path_for_dialogue(d, chart_for(d, charts)));

  json doc;
  doc["flowcharts"] = json::array();
  std::size_t total = 0, uncovered = 0;
  for (const auto& [id, chart] : charts) {
    const CoverageReport r = coverage_stats(seen[id], chart);
    total += r.total_paths;
    uncovered += r.total_paths - r.covered_paths;
    doc["flowcharts"].push_back({{"flowchart_id", r.flowchart_id},
                                 {"total_paths", r.total_paths},
                                 {"covered_paths", r.covered_paths},
                                 {"uncovered_fraction", r.uncovered_fraction},
                                 {"uncovered_path_ids", r.uncovered_path_ids}});
  }
  const double frac = total ? static_cast<double>(uncovered) / static_cast<double>(total) : 0.0;
  doc["total_paths"] = total;
  doc["uncovered_paths"] = uncovered;
  doc["uncovered_fraction"] = frac;
  emit(a.out, doc.dump(2) + "\n");
  std::cerr << uncovered << " of " << total << " paths uncovered (" << frac << ")\n";
  return kOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  ChartArgs charts;
  std::string corpus;
  std::string config;
  std::string out;
  std::string metrics_log;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::string setting;
  std::optional<double> split_uncovered;
};

int cmd_train(const TrainArgs& a) {
  const ChartMap charts = load_charts(a.charts);
  Corpus corpus = load_corpus_file(a.corpus, charts);
  TrainConfig config;
  if (!a.config.empty()) config = train_config_from_json(read_file(a.config));
  if (a.seed) config.seed = *a.seed;
  if (a.epochs) config.epochs = *a.epochs;
  config.validate();

  if (!a.setting.empty()) {
    const auto setting = a.setting == "in" ? FlowchartSetting::in_flowchart
                                           : FlowchartSetting::out_of_flowchart;
    CorpusSplit split = split_flowchart_setting(corpus, setting);
    log::info("setting ", a.setting, ": ", split.train.size(), " train / ", split.test.size(),
              " test dialogues");
    corpus = std::move(split.train);
  }
  if (a.split_uncovered) {
    PathSplit split = split_uncovered_paths(corpus, charts, *a.split_uncovered, config.seed);
    log::info("path split: ", split.covered_keys.size(), " training paths, ",
              split.uncovered_keys.size(), " held-out paths");
    corpus = std::move(split.covered);
  }

  std::string log_lines;
  TrainState state = train(corpus, charts, config, [&](const LossReport& r) {
    log_lines += r.to_json_line() + "\n";
  });
  if (!a.metrics_log.empty()) write_file_atomic(a.metrics_log, log_lines);

  Checkpoint ck;
  ck.state = std::move(state);
  for (const auto& [id, chart] : charts)
    if (corpus.flowchart_ids.count(id)) ck.charts.push_back(chart);
  ck.corpus_size = corpus.size();
  save_checkpoint(ck, a.out);
  std::cerr << "checkpoint " << ck.hash() << " written to " << a.out << "\n";
  return kOk;
}

// --- generate --------------------------------------------------------------

struct GenerateArgs {
  ChartArgs charts;
  std::string checkpoint;
  std::string out;
  std::string manifest;
  std::size_t factor = 10;
  std::uint64_t seed = 1;
  std::optional<std::size_t> base_size;
  std::size_t threads = 1;
  bool greedy = false;
  double act_temperature = 1.0;
  double token_temperature = 0.9;
  std::size_t top_k = 20;
};

int cmd_generate(const GenerateArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  ChartMap charts = load_charts(a.charts, false);
  if (charts.empty())
    for (const auto& c : ck.charts) charts.emplace(c.id(), c);
  if (charts.empty()) throw ValidationError("checkpoint holds no flowcharts; pass --flowcharts");

  GenerationConfig g = a.greedy ? GenerationConfig::greedy() : GenerationConfig{};
  g.seed = a.seed;
  g.factor = a.factor;
  g.threads = a.threads;
  if (!a.greedy) {
    g.act_temperature = a.act_temperature;
    g.token_temperature = a.token_temperature;
    g.top_k = a.top_k;
  }
  const std::size_t base = a.base_size.value_or(ck.corpus_size);
  if (base == 0) throw ValidationError("base corpus size is 0; pass --base-size");

  AugmentResult result = augment(ck.model(), charts, base, g, ck.hash());
  emit(a.out, corpus_text(result.corpus));
  std::string manifest_path = a.manifest;
  if (manifest_path.empty() && !a.out.empty() && a.out != "-") manifest_path = a.out + ".manifest.json";
  if (!manifest_path.empty()) write_file_atomic(manifest_path, result.manifest.to_json() + "\n");
  std::cerr << result.manifest.generated << " dialogues generated\n";
  return kOk;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  ChartArgs charts;
  std::string candidates;
  std::string references;
  std::string word_vectors;
  std::string granularity = "dialogue";
  std::string external_scorer;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const ChartMap charts = load_charts(a.charts);
  CorpusOptions lenient;
  lenient.warn_on_speaker_repeat = false;
  const Corpus cand = load_corpus_file(a.candidates, charts, lenient);
  const Corpus refs = load_corpus_file(a.references, charts, lenient);

  metrics::ReportOptions opts;
  opts.granularity = a.granularity == "utterance" ? metrics::Granularity::utterance
                                                  : metrics::Granularity::dialogue;
  std::optional<metrics::WordVectors> wv;
  if (!a.word_vectors.empty()) {
    wv = metrics::WordVectors::load_file(a.word_vectors);
    opts.vectors = &*wv;
  }
  if (!a.external_scorer.empty()) opts.external = metrics::command_scorer(a.external_scorer);

  const metrics::MetricReport rep = metrics::report(cand, refs, charts, opts);
  std::cerr << rep.to_table();
  emit(a.out, rep.to_json_line() + "\n");
  return kOk;
}

// --- inspect ---------------------------------------------------------------

struct InspectArgs {
  ChartArgs charts;
  std::string checkpoint;
  std::string corpus;
};

int cmd_inspect(const InspectArgs& a) {
  json doc;
  if (!a.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    doc["hash"] = ck.hash();
    doc["config"] = json::parse(train_config_to_json(ck.state.config));
    doc["vocabulary_size"] = ck.model().vocab().size();
    doc["parameters"] = ck.model().params().scalar_count();
    doc["epoch"] = ck.state.epoch;
    doc["corpus_size"] = ck.corpus_size;
    doc["flowcharts"] = json::array();
    for (const auto& c : ck.charts) doc["flowcharts"].push_back(c.id());
    if (!ck.state.reports.empty())
      doc["last_report"] = json::parse(ck.state.reports.back().to_json_line());
  }
  if (!a.corpus.empty()) {
    const ChartMap charts = load_charts(a.charts);
    const Corpus corpus = load_corpus_file(a.corpus, charts);
    std::size_t utterances = 0;
    for (const auto& d : corpus.dialogues) utterances += d.utterance_count();
    json acts;
    for (const auto& [act, share] : act_distribution(corpus)) acts[std::string(to_string(act))] = share;
    doc["corpus"] = {{"dialogues", corpus.size()},
                     {"utterances", utterances},
                     {"flowcharts", corpus.flowchart_ids},
                     {"act_distribution", acts}};
  }
  if (doc.is_null()) throw ValidationError("inspect: pass --checkpoint and/or --corpus");
  std::cout << doc.dump(2) << "\n";
  return kOk;
}

// --- make-toy --------------------------------------------------------------

struct ToyArgs {
  std::string out_dir;
  toy::ToyOptions options;
};

int cmd_make_toy(const ToyArgs& a) {
  const toy::ToyData data = toy::make_toy(a.options);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir / "flowcharts");
  for (const auto& c : data.charts)
    write_file_atomic((dir / "flowcharts" / (c.id() + ".json")).string(), save_flowchart(c) + "\n");
  write_file_atomic((dir / "dialogues.jsonl").string(), corpus_text(data.corpus));
  std::cerr << data.charts.size() << " flowcharts and " << data.corpus.size()
            << " dialogues written to " << a.out_dir << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"flowplan: flowchart-grounded dialogue synthesis and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "flowplan 0.1.0");

  PathsArgs paths;
  auto* c_paths = app.add_subcommand("paths", "List every root-to-action path key");
  add_chart_flags(c_paths, paths.charts);
  c_paths->add_option("--out", paths.out, "Output file (default stdout)");

  CoverageArgs coverage;
  auto* c_cov = app.add_subcommand("coverage", "Report path coverage of a corpus");
  add_chart_flags(c_cov, coverage.charts);
  c_cov->add_option("--corpus", coverage.corpus)->required()->check(CLI::ExistingFile);
  c_cov->add_option("--out", coverage.out);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the planner on a dialogue corpus");
  add_chart_flags(c_train, tr.charts);
  c_train->add_option("--corpus", tr.corpus)->required()->check(CLI::ExistingFile);
  c_train->add_option("--config", tr.config, "JSON training config")->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Checkpoint path")->required();
  c_train->add_option("--metrics-log", tr.metrics_log, "Per-epoch loss reports (JSONL)");
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--setting", tr.setting, "Train on the training side of a flowchart split")
      ->check(CLI::IsMember({"in", "out"}));
  c_train->add_option("--split-uncovered", tr.split_uncovered,
                      "Train only on this fraction of covered paths")
      ->check(CLI::Range(0.0, 1.0));

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Synthesize dialogues for every flowchart path");
  add_chart_flags(c_gen, gen.charts);
  c_gen->add_option("--checkpoint", gen.checkpoint)->required()->check(CLI::ExistingFile);
  c_gen->add_option("--out", gen.out, "Output corpus (default stdout)");
  c_gen->add_option("--manifest", gen.manifest, "Manifest path (default <out>.manifest.json)");
  c_gen->add_option("--factor", gen.factor)->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--base-size", gen.base_size, "Override the training corpus size");
  c_gen->add_option("--threads", gen.threads)->check(CLI::PositiveNumber);
  c_gen->add_flag("--greedy", gen.greedy, "Greedy acts and tokens");
  c_gen->add_option("--act-temperature", gen.act_temperature);
  c_gen->add_option("--token-temperature", gen.token_temperature);
  c_gen->add_option("--top-k", gen.top_k);

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Score candidates against references");
  add_chart_flags(c_eval, ev.charts);
  c_eval->add_option("--candidates", ev.candidates)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--references", ev.references)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--word-vectors", ev.word_vectors)->check(CLI::ExistingFile);
  c_eval->add_option("--granularity", ev.granularity)
      ->check(CLI::IsMember({"dialogue", "utterance"}));
  c_eval->add_option("--external-scorer", ev.external_scorer,
                     "Command scoring a JSONL file of candidate/reference pairs");
  c_eval->add_option("--out", ev.out, "Structured report (default stdout)");

  InspectArgs in;
  auto* c_inspect = app.add_subcommand("inspect", "Summarize a checkpoint or corpus");
  add_chart_flags(c_inspect, in.charts);
  c_inspect->add_option("--checkpoint", in.checkpoint)->check(CLI::ExistingFile);
  c_inspect->add_option("--corpus", in.corpus)->check(CLI::ExistingFile);

  ToyArgs toy_args;
  auto* c_toy = app.add_subcommand("make-toy", "Write a seeded toy flowchart set and corpus");
  c_toy->group("");
  c_toy->add_option("--out", toy_args.out_dir, "Output directory")->required();
  c_toy->add_option("--seed", toy_args.options.seed);
  c_toy->add_option("--dialogues", toy_args.options.dialogues);
  c_toy->add_option("--charts", toy_args.options.charts);

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*c_paths) return cmd_paths(paths);
    if (*c_cov) return cmd_coverage(coverage);
    if (*c_train) return cmd_train(tr);
    if (*c_gen) return cmd_generate(gen);
    if (*c_eval) return cmd_evaluate(ev);
    if (*c_inspect) return cmd_inspect(in);
    if (*c_toy) return cmd_make_toy(toy_args);
  } catch (const ValidationError& e) {
    log::error(e.what());
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    log::error(e.what());
    return kValidation;
  } catch (const std::exception& e) {
    log::error(e.what());
    return kRuntime;
  }
  return kValidation;
}

}  // namespace flowplan::cli
