#pragma once

// Directed communication graph of the platoon. Edges run sender -> receiver;
// an agent's in-neighbors are the peers it hears from each round, and the
// lowest-numbered in-neighbor doubles as its tracking reference.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "platoon/common.hpp"

namespace platoon {

struct Topology {
  int n_agents = 0;
  std::vector<std::pair<int, int>> edges;  // sender -> receiver
  int leader = -1;                         // -1: no designated leader

  std::vector<int> in_neighbors(int id) const {
    std::vector<int> in;
    for (const auto& [from, to] : edges)
      if (to == id) in.push_back(from);
    std::sort(in.begin(), in.end());
    return in;
  }

  bool has_edge(int from, int to) const {
    return std::find(edges.begin(), edges.end(), std::make_pair(from, to)) !=
           edges.end();
  }
};

/// Structural checks shared by every loader: ids in range, no self-loops,
/// the leader hears from nobody, and every agent is reachable from the
/// leader (otherwise part of the platoon would never receive a reference).
inline void validate_topology(const Topology& topo) {
  if (topo.n_agents <= 0)
    throw ConfigError("topology declares no agents");
  for (const auto& [from, to] : topo.edges) {
    if (from < 0 || from >= topo.n_agents || to < 0 || to >= topo.n_agents)
      throw ConfigError("edge " + std::to_string(from) + "->" +
                        std::to_string(to) + " references unknown agent");
    if (from == to)
      throw ConfigError("agent " + std::to_string(from) +
                        " has a self-edge");
  }
  if (topo.leader < 0 || topo.leader >= topo.n_agents)
    throw ConfigError("leader id out of range");
  if (!topo.in_neighbors(topo.leader).empty())
    throw ConfigError("leader must not have in-edges");

  // Reachability sweep from the leader along directed edges.
  std::vector<bool> seen(topo.n_agents, false);
  std::vector<int> stack{topo.leader};
  seen[topo.leader] = true;
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    for (const auto& [from, to] : topo.edges)
      if (from == cur && !seen[to]) {
        seen[to] = true;
        stack.push_back(to);
      }
  }
  for (int i = 0; i < topo.n_agents; ++i)
    if (!seen[i])
      throw ConfigError("graph is disconnected: agent " + std::to_string(i) +
                        " is unreachable from the leader");
}

/// Parses `agent <id>` / `edge <from> <to>` / `leader <id>` lines. Blank
/// lines and '#' comments are skipped. `where` names the source in errors.
inline Topology parse_topology_lines(const std::vector<std::string>& lines,
                                     const std::string& where) {
  Topology topo;
  int max_id = -1;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string line = lines[ln];
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    std::string key;
    if (!(is >> key)) continue;
    const std::string at = where + ":" + std::to_string(ln + 1);
    if (key == "agent") {
      int id;
      if (!(is >> id)) throw ConfigError(at + ": agent line needs an id");
      max_id = std::max(max_id, id);
    } else if (key == "edge") {
      int from, to;
      if (!(is >> from >> to))
        throw ConfigError(at + ": edge line needs <from> <to>");
      topo.edges.emplace_back(from, to);
      max_id = std::max({max_id, from, to});
    } else if (key == "leader") {
      int id;
      if (!(is >> id)) throw ConfigError(at + ": leader line needs an id");
      topo.leader = id;
    } else {
      throw ConfigError(at + ": unknown topology directive '" + key + "'");
    }
  }
  topo.n_agents = max_id + 1;
  if (topo.leader < 0) topo.leader = 0;  // conventional default
  validate_topology(topo);
  return topo;
}

inline Topology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open topology file " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return parse_topology_lines(lines, path);
}

/// Leader chain 0 -> 1 -> ... -> n-1, the default platoon wiring.
inline Topology chain_topology(int n) {
  Topology topo;
  topo.n_agents = n;
  topo.leader = 0;
  for (int i = 0; i + 1 < n; ++i) topo.edges.emplace_back(i, i + 1);
  validate_topology(topo);
  return topo;
}

}  // namespace platoon
