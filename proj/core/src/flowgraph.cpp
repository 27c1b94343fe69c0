#include "flowplan/flowgraph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flowplan/errors.hpp"
#include "flowplan/log.hpp"

namespace flowplan {

using nlohmann::json;

std::string_view to_string(NodeKind kind) {
  return kind == NodeKind::decision ? "decision" : "action";
}

Flowchart Flowchart::build(std::string id, std::string root, std::vector<FlowNode> nodes,
                           std::vector<FlowEdge> edges) {
  Flowchart chart;
  if (id.empty()) throw ValidationError("flowchart id is empty");
  chart.id_ = std::move(id);
  chart.root_ = std::move(root);
  chart.nodes_ = std::move(nodes);
  chart.edges_ = std::move(edges);
  const std::string where = "flowchart '" + chart.id_ + "': ";

  for (std::size_t i = 0; i < chart.nodes_.size(); ++i) {
    const FlowNode& n = chart.nodes_[i];
    if (n.id.empty()) throw ValidationError(where + "node with empty id");
    if (n.text.empty()) throw ValidationError(where + "node '" + n.id + "' has empty text");
    if (!chart.index_.emplace(n.id, i).second)
      throw ValidationError(where + "duplicate node id '" + n.id + "'");
    chart.out_[n.id];
  }
  if (chart.find(chart.root_) == nullptr)
    throw ValidationError(where + "root '" + chart.root_ + "' is not a node");

  std::set<std::pair<std::string, std::string>> seen_responses;
  for (const FlowEdge& e : chart.edges_) {
    const FlowNode* from = chart.find(e.from);
    if (from == nullptr) throw ValidationError(where + "edge from unknown node '" + e.from + "'");
    if (chart.find(e.to) == nullptr)
      throw ValidationError(where + "edge to unknown node '" + e.to + "'");
    if (from->kind == NodeKind::action)
      throw ValidationError(where + "action node with outgoing edge ('" + e.from + "' -> '" +
                            e.to + "')");
    if (e.response.empty())
      throw ValidationError(where + "edge '" + e.from + "' -> '" + e.to + "' has empty response");
    if (!seen_responses.emplace(e.from, e.response).second)
      throw ValidationError(where + "duplicate (from, response) pair ('" + e.from + "', '" +
                            e.response + "')");
    chart.out_[e.from].push_back(e);
  }
  for (auto& [node_id, out] : chart.out_) {
    std::sort(out.begin(), out.end(), [](const FlowEdge& a, const FlowEdge& b) {
      return std::tie(a.response, a.to) < std::tie(b.response, b.to);
    });
    if (chart.node(node_id).kind == NodeKind::decision && out.empty())
      throw ValidationError(where + "decision node '" + node_id + "' has no outgoing edge");
  }

  // Cycle detection and reachability in one colored DFS from the root.
  enum Color { white, grey, black };
  std::map<std::string, Color, std::less<>> color;
  for (const auto& n : chart.nodes_) color[n.id] = white;
  std::vector<std::pair<std::string, std::size_t>> stack{{chart.root_, 0}};
  color[chart.root_] = grey;
  while (!stack.empty()) {
    auto& [node_id, next] = stack.back();
    const auto& out = chart.out_.at(node_id);
    if (next == out.size()) {
      color[node_id] = black;
      stack.pop_back();
      continue;
    }
    const std::string& to = out[next++].to;
    if (color[to] == grey) throw ValidationError(where + "cycle detected through '" + to + "'");
    if (color[to] == white) {
      color[to] = grey;
      stack.emplace_back(to, 0);
    }
  }
  for (const auto& n : chart.nodes_)
    if (color[n.id] == white)
      throw ValidationError(where + "unreachable node '" + n.id + "'");
  return chart;
}

const FlowNode* Flowchart::find(std::string_view node_id) const {
  auto it = index_.find(node_id);
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const FlowNode& Flowchart::node(std::string_view node_id) const {
  const FlowNode* n = find(node_id);
  if (n == nullptr)
    throw ValidationError("flowchart '" + id_ + "': unknown node '" + std::string(node_id) + "'");
  return *n;
}

const std::vector<FlowEdge>& Flowchart::out_edges(std::string_view node_id) const {
  auto it = out_.find(node_id);
  if (it == out_.end())
    throw ValidationError("flowchart '" + id_ + "': unknown node '" + std::string(node_id) + "'");
  return it->second;
}

std::string FlowPath::key() const {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out += '>';
    out += steps[i].node_id;
    if (steps[i].response) {
      out += '|';
      out += *steps[i].response;
    }
  }
  return out;
}

std::vector<std::string> FlowPath::node_ids() const {
  std::vector<std::string> ids;
  ids.reserve(steps.size());
  for (const auto& s : steps) ids.push_back(s.node_id);
  return ids;
}

namespace {

const std::set<std::string> kChartFields{"id", "root", "nodes", "edges"};
const std::set<std::string> kNodeFields{"id", "kind", "text"};
const std::set<std::string> kEdgeFields{"from", "to", "response"};

void check_fields(const json& obj, const std::set<std::string>& allowed, const std::string& what,
                  const LoadOptions& options) {
  for (const auto& [k, v] : obj.items()) {
    if (allowed.count(k)) continue;
    if (options.strict) throw ValidationError("unknown field '" + k + "' in " + what);
    log::warn("ignoring unknown field '", k, "' in ", what);
  }
}

std::string require_string(const json& obj, const char* field, const std::string& what) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string())
    throw ValidationError(what + ": field '" + field + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

Flowchart load_flowchart(std::string_view document, const LoadOptions& options) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("flowchart document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("flowchart document must be an object");
  check_fields(doc, kChartFields, "flowchart", options);
  std::string id = require_string(doc, "id", "flowchart");
  std::string root = require_string(doc, "root", "flowchart '" + id + "'");
  if (!doc.contains("nodes") || !doc["nodes"].is_array())
    throw ValidationError("flowchart '" + id + "': 'nodes' must be an array");
  if (!doc.contains("edges") || !doc["edges"].is_array())
    throw ValidationError("flowchart '" + id + "': 'edges' must be an array");

  std::vector<FlowNode> nodes;
  for (const auto& n : doc["nodes"]) {
    if (!n.is_object()) throw ValidationError("flowchart '" + id + "': node must be an object");
    check_fields(n, kNodeFields, "node", options);
    FlowNode node;
    node.id = require_string(n, "id", "node");
    std::string kind = require_string(n, "kind", "node '" + node.id + "'");
    if (kind == "decision") {
      node.kind = NodeKind::decision;
    } else if (kind == "action") {
      node.kind = NodeKind::action;
    } else {
      throw ValidationError("node '" + node.id + "': kind must be decision or action, got '" +
                            kind + "'");
    }
    node.text = require_string(n, "text", "node '" + node.id + "'");
    nodes.push_back(std::move(node));
  }
  std::vector<FlowEdge> edges;
  for (const auto& e : doc["edges"]) {
    if (!e.is_object()) throw ValidationError("flowchart '" + id + "': edge must be an object");
    check_fields(e, kEdgeFields, "edge", options);
    edges.push_back({require_string(e, "from", "edge"), require_string(e, "to", "edge"),
                     require_string(e, "response", "edge")});
  }
  return Flowchart::build(std::move(id), std::move(root), std::move(nodes), std::move(edges));
}

Flowchart load_flowchart_file(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open flowchart file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return load_flowchart(buf.str(), options);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string save_flowchart(const Flowchart& chart) {
  json doc;
  doc["id"] = chart.id();
  doc["root"] = chart.root();
  doc["nodes"] = json::array();
  for (const auto& n : chart.nodes())
    doc["nodes"].push_back({{"id", n.id}, {"kind", std::string(to_string(n.kind))}, {"text", n.text}});
  doc["edges"] = json::array();
  for (const auto& e : chart.edges())
    doc["edges"].push_back({{"from", e.from}, {"to", e.to}, {"response", e.response}});
  return doc.dump(2);
}

std::map<std::string, Flowchart> load_flowchart_dir(const std::string& dir,
                                                    const LoadOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, Flowchart> charts;
  for (const auto& f : files) {
    Flowchart chart = load_flowchart_file(f.string(), options);
    std::string id = chart.id();
    if (!charts.emplace(id, std::move(chart)).second)
      throw ValidationError("duplicate flowchart id '" + id + "' in '" + dir + "'");
  }
  if (charts.empty()) throw ValidationError("no flowchart *.json files in '" + dir + "'");
  return charts;
}

std::vector<FlowPath> enumerate_paths(const Flowchart& chart) {
  std::vector<FlowPath> paths;
  FlowPath current{chart.id(), {}};
  // Explicit stack of (node, next edge index) keeps deep charts off the call stack.
  std::vector<std::pair<std::string, std::size_t>> stack{{chart.root(), 0}};
  current.steps.push_back({chart.root(), std::nullopt});
  while (!stack.empty()) {
    auto& [node_id, next] = stack.back();
    const auto& out = chart.out_edges(node_id);
    if (out.empty()) {
      paths.push_back(current);
    }
    if (next == out.size()) {
      stack.pop_back();
      current.steps.pop_back();
      if (!current.steps.empty()) current.steps.back().response.reset();
      continue;
    }
    const FlowEdge& edge = out[next++];
    current.steps.back().response = edge.response;
    current.steps.push_back({edge.to, std::nullopt});
    stack.emplace_back(edge.to, 0);
  }
  return paths;
}

void validate_path(const FlowPath& path, const Flowchart& chart) {
  if (path.flowchart_id != chart.id())
    throw ValidationError("path belongs to flowchart '" + path.flowchart_id + "', not '" +
                          chart.id() + "'");
  if (path.steps.empty()) throw ValidationError("empty path");
  if (path.steps.front().node_id != chart.root())
    throw ValidationError("path does not start at the root '" + chart.root() + "'");
  for (std::size_t i = 0; i < path.steps.size(); ++i) {
    const PathStep& step = path.steps[i];
    const FlowNode& node = chart.node(step.node_id);
    const bool last = i + 1 == path.steps.size();
    if (last) {
      if (node.kind != NodeKind::action)
        throw ValidationError("path ends at non-action node '" + step.node_id + "'");
      if (step.response) throw ValidationError("terminal step carries a response");
      continue;
    }
    if (node.kind == NodeKind::action)
      throw ValidationError("action node '" + step.node_id + "' before the end of the path");
    if (!step.response) throw ValidationError("step '" + step.node_id + "' lacks a response");
    const auto& out = chart.out_edges(step.node_id);
    bool found = std::any_of(out.begin(), out.end(), [&](const FlowEdge& e) {
      return e.response == *step.response && e.to == path.steps[i + 1].node_id;
    });
    if (!found)
      throw ValidationError("no edge '" + step.node_id + "' -[" + *step.response + "]-> '" +
                            path.steps[i + 1].node_id + "'");
  }
}

FlowPath path_from_nodes(const std::vector<std::string>& node_ids, const Flowchart& chart) {
  if (node_ids.empty()) throw ValidationError("not a valid path: empty node sequence");
  FlowPath path{chart.id(), {}};
  for (const auto& id : node_ids) {
    if (chart.find(id) == nullptr)
      throw ValidationError("unknown node '" + id + "' in flowchart '" + chart.id() + "'");
  }
  if (node_ids.front() != chart.root())
    throw ValidationError("not a valid path: first node '" + node_ids.front() +
                          "' is not the root '" + chart.root() + "'");
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    PathStep step{node_ids[i], std::nullopt};
    if (i + 1 < node_ids.size()) {
      const auto& out = chart.out_edges(node_ids[i]);
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const FlowEdge& e) { return e.to == node_ids[i + 1]; });
      if (it == out.end())
        throw ValidationError("not a valid path: no edge '" + node_ids[i] + "' -> '" +
                              node_ids[i + 1] + "'");
      step.response = it->response;
    }
    path.steps.push_back(std::move(step));
  }
  if (chart.node(node_ids.back()).kind != NodeKind::action)
    throw ValidationError("not a valid path: last node '" + node_ids.back() +
                          "' is not an action node");
  return path;
}

CoverageReport coverage_stats(const std::vector<FlowPath>& paths_seen, const Flowchart& chart) {
  std::set<std::string> seen;
  for (const auto& p : paths_seen) {
    if (p.flowchart_id != chart.id())
      throw ValidationError("path from foreign flowchart '" + p.flowchart_id +
                            "' passed to coverage for '" + chart.id() + "'");
    seen.insert(p.key());
  }
  CoverageReport report;
  report.flowchart_id = chart.id();
  const auto all = enumerate_paths(chart);
  report.total_paths = all.size();
  for (const auto& p : all) {
    if (seen.count(p.key())) {
      ++report.covered_paths;
    } else {
      report.uncovered_path_ids.push_back(p.key());
    }
  }
  const double raw = report.total_paths == 0
                         ? 0.0
                         : 1.0 - static_cast<double>(report.covered_paths) /
                                     static_cast<double>(report.total_paths);
  report.uncovered_fraction = std::round(raw * 10000.0) / 10000.0;
  return report;
}

}  // namespace flowplan
