#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "flowplan/flowgraph.hpp"
#include "flowplan/metrics.hpp"
#include "flowplan/synthesis.hpp"
#include "flowplan/toy.hpp"
#include "flowplan/training.hpp"

using namespace flowplan;

namespace {

// Layered chart where every node of layer k links to both nodes of layer
// k + 1, so the path count doubles per layer.
Flowchart ladder(int layers) {
  std::vector<FlowNode> nodes;
  std::vector<FlowEdge> edges;
  auto id = [](int l, int j) { return "n" + std::to_string(l) + "_" + std::to_string(j); };
  nodes.push_back({"root", NodeKind::decision, "root"});
  for (int l = 0; l < layers; ++l)
    for (int j = 0; j < 2; ++j)
      nodes.push_back({id(l, j), l + 1 < layers ? NodeKind::decision : NodeKind::action, id(l, j)});
  edges.push_back({"root", id(0, 0), "yes"});
  edges.push_back({"root", id(0, 1), "no"});
  for (int l = 0; l + 1 < layers; ++l)
    for (int j = 0; j < 2; ++j) {
      edges.push_back({id(l, j), id(l + 1, 0), "yes"});
      edges.push_back({id(l, j), id(l + 1, 1), "no"});
    }
  return Flowchart::build("ladder", "root", std::move(nodes), std::move(edges));
}

std::vector<metrics::Tokens> texts(std::size_t count, std::size_t len) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> w(0, 199);
  std::vector<metrics::Tokens> out(count, metrics::Tokens(len));
  for (auto& t : out)
    for (auto& s : t) s = "w" + std::to_string(w(rng));
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.d_z = 8;
  c.max_utterance_len = 32;
  c.backbone.d_model = 32;
  c.backbone.encoder_layers = 1;
  c.backbone.decoder_layers = 1;
  c.backbone.heads = 2;
  c.backbone.ffn = 64;
  c.backbone.dropout = 0.0;
  c.backbone.max_turn_len = 64;
  return c;
}

}  // namespace

static void BM_EnumeratePaths(benchmark::State& state) {
  const Flowchart chart = ladder(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(enumerate_paths(chart));
  state.SetComplexityN(1LL << state.range(0));
}
BENCHMARK(BM_EnumeratePaths)->DenseRange(4, 12, 4)->Complexity();

static void BM_Bleu4(benchmark::State& state) {
  const auto t = texts(static_cast<std::size_t>(state.range(0)) + 1, 40);
  const std::vector<metrics::Tokens> refs(t.begin() + 1, t.end());
  for (auto _ : state) benchmark::DoNotOptimize(metrics::bleu4(t[0], refs));
}
BENCHMARK(BM_Bleu4)->Arg(1)->Arg(16);

static void BM_SelfBleu(benchmark::State& state) {
  const auto t = texts(static_cast<std::size_t>(state.range(0)), 40);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::self_bleu(t));
}
BENCHMARK(BM_SelfBleu)->Arg(16)->Arg(64);

static void BM_RougeL(benchmark::State& state) {
  const auto t = texts(2, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(metrics::rouge_l(t[0], t[1]));
}
BENCHMARK(BM_RougeL)->Arg(32)->Arg(256);

static void BM_ItemLossForwardBackward(benchmark::State& state) {
  const auto data = toy::make_toy();
  const TrainConfig cfg = small_config();
  Model model(cfg.model_config(), build_vocabulary(data.corpus, data.chart_map(), cfg.vocab_max));
  const auto items = build_items(model, data.corpus.dialogues.front(), data.charts.front());
  std::mt19937_64 rng(3);
  const LossOptions opts{.free_bits = 0.1, .per_dimension = false};
  for (auto _ : state) {
    ActEncodingCache acts(model, nn::Context::eval());
    ag::Tensor total = ag::Tensor::scalar(0.0);
    for (const auto& it : items) total = total + item_loss(model, it, draw_noise(it, cfg.d_z, rng), acts, opts).total;
    model.params().zero_grad();
    ag::backward(total);
  }
}
BENCHMARK(BM_ItemLossForwardBackward)->Unit(benchmark::kMillisecond);

static void BM_GenerateDialogue(benchmark::State& state) {
  const auto data = toy::make_toy();
  const TrainConfig cfg = small_config();
  Model model(cfg.model_config(), build_vocabulary(data.corpus, data.chart_map(), cfg.vocab_max));
  const auto paths = enumerate_paths(data.charts.front());
  GenerationConfig gen;
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(generate_dialogue(model, data.charts.front(), paths.front(), seed++, gen));
}
BENCHMARK(BM_GenerateDialogue)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
