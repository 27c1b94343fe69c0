#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flowplan {

enum class NodeKind { decision, action };

std::string_view to_string(NodeKind kind);

struct FlowNode {
  std::string id;
  NodeKind kind = NodeKind::decision;
  std::string text;
};

struct FlowEdge {
  std::string from;
  std::string to;
  std::string response;
};

// A validated, immutable troubleshooting flowchart: a rooted DAG whose sinks
// are exactly the action nodes. Construct through load_flowchart or
// Flowchart::build; both run the full invariant check.
class Flowchart {
 public:
  static Flowchart build(std::string id, std::string root, std::vector<FlowNode> nodes,
                         std::vector<FlowEdge> edges);

  const std::string& id() const noexcept { return id_; }
  const std::string& root() const noexcept { return root_; }
  const std::vector<FlowNode>& nodes() const noexcept { return nodes_; }
  const std::vector<FlowEdge>& edges() const noexcept { return edges_; }

  const FlowNode* find(std::string_view node_id) const;
  const FlowNode& node(std::string_view node_id) const;

  // Outgoing edges in traversal order: by response label, then target id.
  const std::vector<FlowEdge>& out_edges(std::string_view node_id) const;

 private:
  Flowchart() = default;

  std::string id_;
  std::string root_;
  std::vector<FlowNode> nodes_;
  std::vector<FlowEdge> edges_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, std::vector<FlowEdge>, std::less<>> out_;
};

struct PathStep {
  std::string node_id;
  std::optional<std::string> response;  // absent on the terminal step

  bool operator==(const PathStep&) const = default;
};

struct FlowPath {
  std::string flowchart_id;
  std::vector<PathStep> steps;

  // Canonical key "n0|resp0>n1|resp1>...>nk" used for coverage hashing.
  std::string key() const;
  std::vector<std::string> node_ids() const;

  bool operator==(const FlowPath&) const = default;
};

struct CoverageReport {
  std::string flowchart_id;
  std::size_t total_paths = 0;
  std::size_t covered_paths = 0;
  double uncovered_fraction = 1.0;
  std::vector<std::string> uncovered_path_ids;
};

struct LoadOptions {
  bool strict = false;  // reject unknown fields instead of warning
};

Flowchart load_flowchart(std::string_view document, const LoadOptions& options = {});
Flowchart load_flowchart_file(const std::string& path, const LoadOptions& options = {});
std::string save_flowchart(const Flowchart& chart);

// Loads every *.json file in a directory, keyed by flowchart id.
std::map<std::string, Flowchart> load_flowchart_dir(const std::string& dir,
                                                    const LoadOptions& options = {});

// Every root-to-action path exactly once, depth-first in edge order.
std::vector<FlowPath> enumerate_paths(const Flowchart& chart);

// Checks edge-consistency and terminal invariants; throws ValidationError.
void validate_path(const FlowPath& path, const Flowchart& chart);

// Resolves a node-id sequence to the path it traverses. Where two edges join
// the same pair of nodes the first in traversal order is taken.
FlowPath path_from_nodes(const std::vector<std::string>& node_ids, const Flowchart& chart);

CoverageReport coverage_stats(const std::vector<FlowPath>& paths_seen, const Flowchart& chart);

}  // namespace flowplan
