#include "flowplan/toy.hpp"

#include <array>
#include <random>
#include <string>

#include "flowplan/errors.hpp"

namespace flowplan::toy {

namespace {

struct Theme {
  const char* id;
  const char* device;
  const char* complaint;
  std::array<const char*, 3> questions;  // q0, q1, q2
  std::array<const char*, 4> actions;    // a0 (q0 no), a1 (q1 no), a2 (q2 yes), a3 (q2 no)
};

constexpr std::array<Theme, 3> kThemes{{
    {"printer", "printer", "will not print",
     {"is the printer powered on", "does the status light blink", "is paper jammed in the tray"},
     {"plug the printer in and press the power button", "reinstall the printer driver",
      "open the tray and remove the jammed paper", "replace the ink cartridge"}},
    {"router", "router", "has no internet",
     {"is the router plugged in", "is the wan light green", "can you reach the admin page"},
     {"connect the router to a wall socket", "call the provider about the line",
      "restore the factory settings from the admin page", "reset the router with the pin button"}},
    {"laptop", "laptop", "keeps shutting down",
     {"is the battery charged", "does the fan spin", "is the vent blocked by dust"},
     {"charge the battery for an hour", "replace the cooling fan",
      "clean the vent with compressed air", "update the system firmware"}},
}};

template <std::size_t N>
const char* pick(const std::array<const char*, N>& options, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> d(0, N - 1);
  return options[d(rng)];
}

Flowchart build_chart(const Theme& t) {
  std::vector<FlowNode> nodes{
      {"q0", NodeKind::decision, t.questions[0]}, {"q1", NodeKind::decision, t.questions[1]},
      {"q2", NodeKind::decision, t.questions[2]}, {"a0", NodeKind::action, t.actions[0]},
      {"a1", NodeKind::action, t.actions[1]},     {"a2", NodeKind::action, t.actions[2]},
      {"a3", NodeKind::action, t.actions[3]},
  };
  std::vector<FlowEdge> edges{{"q0", "q1", "yes"}, {"q0", "a0", "no"}, {"q1", "q2", "yes"},
                              {"q1", "a1", "no"},  {"q2", "a2", "yes"}, {"q2", "a3", "no"}};
  return Flowchart::build(t.id, "q0", std::move(nodes), std::move(edges));
}

std::string statement(const Theme& t, std::mt19937_64& rng) {
  static constexpr std::array<const char*, 4> openers{"hi , my", "hello , my", "my", "help , my"};
  return std::string(pick(openers, rng)) + " " + t.device + " " + t.complaint;
}

std::string question(const FlowNode& n, std::mt19937_64& rng) {
  static constexpr std::array<const char*, 4> lead{"", "can you tell me ", "please check , ",
                                                   "okay , "};
  return std::string(pick(lead, rng)) + n.text + " ?";
}

std::string answer(const std::string& response, std::mt19937_64& rng) {
  static constexpr std::array<const char*, 3> yes{"yes", "yes it is", "yes , i checked"};
  static constexpr std::array<const char*, 3> no{"no", "no it is not", "no , i checked"};
  if (response == "yes") return pick(yes, rng);
  if (response == "no") return pick(no, rng);
  return response;
}

std::string clarify(std::mt19937_64& rng) {
  static constexpr std::array<const char*, 3> c{"what do you mean ?", "sorry , which one ?",
                                                "how do i check that ?"};
  return pick(c, rng);
}

std::string suggest(const FlowNode& n, std::mt19937_64& rng) {
  static constexpr std::array<const char*, 3> lead{"please ", "you should ", "try to "};
  return std::string(pick(lead, rng)) + n.text + " .";
}

}  // namespace

ChartMap ToyData::chart_map() const {
  ChartMap m;
  for (const auto& c : charts) m.emplace(c.id(), c);
  return m;
}

ToyData make_toy(const ToyOptions& options) {
  if (options.charts == 0 || options.charts > kThemes.size())
    throw ValidationError("toy: charts must be between 1 and " + std::to_string(kThemes.size()));
  if (options.dialogues == 0) throw ValidationError("toy: dialogues must be >= 1");
  std::mt19937_64 rng(options.seed);
  std::bernoulli_distribution clarification(options.clarification_rate);

  ToyData data;
  std::vector<std::pair<std::size_t, FlowPath>> paths;
  for (std::size_t c = 0; c < options.charts; ++c) {
    data.charts.push_back(build_chart(kThemes[c]));
    for (auto& p : enumerate_paths(data.charts.back())) paths.emplace_back(c, std::move(p));
  }

  for (std::size_t k = 0; k < options.dialogues; ++k) {
    const auto& [c, path] = paths[k % paths.size()];
    const Flowchart& chart = data.charts[c];
    const Theme& theme = kThemes[c];
    Dialogue d;
    d.id = "toy-" + std::to_string(k);
    d.flowchart_id = chart.id();
    for (std::size_t i = 0; i < path.steps.size(); ++i) {
      const PathStep& step = path.steps[i];
      const FlowNode& node = chart.node(step.node_id);
      SubDialogue sub{node.id, {}};
      if (node.kind == NodeKind::action) {
        sub.utterances.push_back({Speaker::agent, suggest(node, rng), DialogueAct::suggestion});
      } else {
        if (i == 0) sub.utterances.push_back({Speaker::user, statement(theme, rng), DialogueAct::statement});
        sub.utterances.push_back({Speaker::agent, question(node, rng), DialogueAct::yes_no_question});
        if (clarification(rng)) {
          sub.utterances.push_back({Speaker::user, clarify(rng), DialogueAct::clarification});
          sub.utterances.push_back({Speaker::agent, question(node, rng), DialogueAct::yes_no_question});
        }
        sub.utterances.push_back({Speaker::user, answer(*step.response, rng), DialogueAct::inform});
      }
      d.sub_dialogues.push_back(std::move(sub));
    }
    data.corpus.add(std::move(d));
  }
  return data;
}

ToyData make_tiny() {
  ToyData data;
  data.charts.push_back(Flowchart::build(
      "tiny", "q0",
      {{"q0", NodeKind::decision, "is it on"}, {"a0", NodeKind::action, "press the button"}},
      {{"q0", "a0", "no"}}));
  Dialogue d;
  d.id = "tiny-0";
  d.flowchart_id = "tiny";
  d.sub_dialogues.push_back({"q0",
                             {{Speaker::agent, "is it on ?", DialogueAct::yes_no_question},
                              {Speaker::user, "no", DialogueAct::inform}}});
  d.sub_dialogues.push_back({"a0", {{Speaker::agent, "press the button", DialogueAct::suggestion}}});
  data.corpus.add(std::move(d));
  return data;
}

}  // namespace flowplan::toy
