#pragma once

#include <cstdint>
#include <vector>

#include "flowplan/corpus.hpp"
#include "flowplan/flowgraph.hpp"

namespace flowplan::toy {

struct ToyOptions {
  std::uint64_t seed = 7;
  std::size_t dialogues = 20;
  std::size_t charts = 1;             // 1..3 themed charts
  double clarification_rate = 0.1;    // decision nodes with an extra clarification turn
};

struct ToyData {
  std::vector<Flowchart> charts;
  Corpus corpus;

  ChartMap chart_map() const;
};

// Small three-question troubleshooting charts (four paths each) and a
// templated corpus spread round-robin over every path. Act plans per node:
// root decision [statement, yes_no_question, inform], later decisions
// [yes_no_question, inform], the action node [suggestion].
ToyData make_toy(const ToyOptions& options = {});

// A two-node chart with one three-utterance dialogue, sized for gradient checks.
ToyData make_tiny();

}  // namespace flowplan::toy
