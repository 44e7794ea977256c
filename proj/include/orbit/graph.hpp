#pragma once

// Spatial-temporal multi-agent graph: agents, role pools, composite
// topologies, and the scheduling primitives shared by every other module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace orbit {

using AgentId = int;
using Edge = std::pair<AgentId, AgentId>;

struct AgentSpec {
  AgentId id = 0;
  std::string role;
  std::string state;
  std::vector<std::string> skills;
  std::vector<double> role_embedding;

  bool operator==(const AgentSpec&) const = default;
};

class RolePool {
 public:
  RolePool() = default;

  explicit RolePool(std::vector<AgentSpec> agents) : agents_(std::move(agents)) {
    std::set<AgentId> seen;
    for (const auto& a : agents_) {
      if (!seen.insert(a.id).second)
        throw std::invalid_argument("duplicate agent id " + std::to_string(a.id));
      if (!agents_.empty() && a.role_embedding.size() != agents_.front().role_embedding.size())
        throw std::invalid_argument("role embeddings have inconsistent dimension");
      for (double v : a.role_embedding)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite role embedding");
    }
    for (const auto& a : agents_) electron_ids_.push_back(a.id);
    std::sort(electron_ids_.begin(), electron_ids_.end());
  }

  // Replaces the nucleus/electron split. Every id not listed as nucleus
  // becomes an electron.
  void set_partition(const std::vector<AgentId>& nucleus) {
    std::set<AgentId> nuc(nucleus.begin(), nucleus.end());
    for (AgentId id : nuc)
      if (!contains(id)) throw std::invalid_argument("nucleus id " + std::to_string(id) + " not in pool");
    nucleus_ids_.assign(nuc.begin(), nuc.end());
    electron_ids_.clear();
    for (const auto& a : agents_)
      if (!nuc.count(a.id)) electron_ids_.push_back(a.id);
    std::sort(electron_ids_.begin(), electron_ids_.end());
  }

  const std::vector<AgentSpec>& agents() const { return agents_; }
  const std::vector<AgentId>& nucleus_ids() const { return nucleus_ids_; }
  const std::vector<AgentId>& electron_ids() const { return electron_ids_; }
  std::size_t size() const { return agents_.size(); }
  std::size_t embedding_dim() const { return agents_.empty() ? 0 : agents_.front().role_embedding.size(); }

  bool contains(AgentId id) const {
    return std::any_of(agents_.begin(), agents_.end(), [id](const AgentSpec& a) { return a.id == id; });
  }
  bool is_nucleus(AgentId id) const {
    return std::binary_search(nucleus_ids_.begin(), nucleus_ids_.end(), id);
  }

  const AgentSpec& agent(AgentId id) const {
    for (const auto& a : agents_)
      if (a.id == id) return a;
    throw std::out_of_range("unknown agent id " + std::to_string(id));
  }

  std::vector<AgentId> ids() const {
    std::vector<AgentId> out;
    for (const auto& a : agents_) out.push_back(a.id);
    return out;
  }

 private:
  std::vector<AgentSpec> agents_;
  std::vector<AgentId> nucleus_ids_;
  std::vector<AgentId> electron_ids_;
};

struct CompositeTopology {
  std::vector<AgentId> active_ids;  // kept sorted
  std::set<Edge> spatial_edges;
  std::set<Edge> temporal_edges;
  int rounds = 1;

  bool operator==(const CompositeTopology&) const = default;
};

struct Message {
  AgentId sender_id = 0;
  int round = 0;
  std::string content;
  long prompt_tokens = 0;
  long completion_tokens = 0;

  bool operator==(const Message&) const = default;
};

// --- validity -------------------------------------------------------------

enum class ViolationKind { cycle, dangling_endpoint, self_loop, bad_rounds };

struct Violation {
  ViolationKind kind;
  std::vector<AgentId> witness;  // cycle path, or the offending edge
  std::string message;
};

struct ValidityReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

namespace detail {

inline std::map<AgentId, std::vector<AgentId>> adjacency(const std::set<Edge>& edges) {
  std::map<AgentId, std::vector<AgentId>> adj;
  for (const auto& [u, v] : edges) adj[u].push_back(v);
  return adj;
}

// Returns a cycle in the spatial graph as [v0, v1, ..., vk] with vk -> v0.
inline std::optional<std::vector<AgentId>> find_cycle(const std::vector<AgentId>& nodes,
                                                      const std::set<Edge>& edges) {
  auto adj = adjacency(edges);
  std::map<AgentId, int> color;  // 0 white, 1 grey, 2 black
  std::vector<AgentId> stack;
  std::optional<std::vector<AgentId>> found;

  std::set<AgentId> all(nodes.begin(), nodes.end());
  for (const auto& [u, v] : edges) {
    all.insert(u);
    all.insert(v);
  }

  std::function<bool(AgentId)> dfs = [&](AgentId u) {
    color[u] = 1;
    stack.push_back(u);
    for (AgentId v : adj[u]) {
      if (color[v] == 1) {
        auto it = std::find(stack.begin(), stack.end(), v);
        found = std::vector<AgentId>(it, stack.end());
        return true;
      }
      if (color[v] == 0 && dfs(v)) return true;
    }
    stack.pop_back();
    color[u] = 2;
    return false;
  };
  for (AgentId u : all)
    if (color[u] == 0 && dfs(u)) return found;
  return std::nullopt;
}

}  // namespace detail

inline ValidityReport validate_topology(const CompositeTopology& topo, const RolePool& pool) {
  ValidityReport report;
  std::set<AgentId> active(topo.active_ids.begin(), topo.active_ids.end());
  auto edge_msg = [](const char* what, const Edge& e) {
    return std::string(what) + " " + std::to_string(e.first) + "->" + std::to_string(e.second);
  };
  if (topo.rounds < 1)
    report.violations.push_back({ViolationKind::bad_rounds, {}, "rounds must be >= 1"});
  for (AgentId id : active)
    if (!pool.contains(id))
      report.violations.push_back({ViolationKind::dangling_endpoint, {id}, "active id not in pool: " + std::to_string(id)});
  for (const auto* edges : {&topo.spatial_edges, &topo.temporal_edges}) {
    const char* channel = edges == &topo.spatial_edges ? "spatial" : "temporal";
    for (const auto& e : *edges) {
      if (e.first == e.second)
        report.violations.push_back({ViolationKind::self_loop, {e.first, e.second},
                                     edge_msg((std::string(channel) + " self-loop").c_str(), e)});
      if (!active.count(e.first) || !active.count(e.second))
        report.violations.push_back({ViolationKind::dangling_endpoint, {e.first, e.second},
                                     edge_msg((std::string(channel) + " dangling endpoint").c_str(), e)});
    }
  }
  std::set<Edge> proper;
  for (const auto& e : topo.spatial_edges)
    if (e.first != e.second) proper.insert(e);
  if (auto cycle = detail::find_cycle(topo.active_ids, proper)) {
    std::ostringstream os;
    os << "spatial cycle:";
    for (AgentId id : *cycle) os << ' ' << id;
    report.violations.push_back({ViolationKind::cycle, *cycle, os.str()});
  }
  return report;
}

struct CycleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Kahn's algorithm over the spatial channel; ties resolved by ascending id.
inline std::vector<AgentId> topological_order(const CompositeTopology& topo) {
  std::map<AgentId, int> indegree;
  for (AgentId id : topo.active_ids) indegree[id] = 0;
  auto adj = detail::adjacency(topo.spatial_edges);
  for (const auto& [u, v] : topo.spatial_edges) {
    indegree.try_emplace(u, 0);
    ++indegree[v];
  }
  std::priority_queue<AgentId, std::vector<AgentId>, std::greater<>> ready;
  for (const auto& [id, d] : indegree)
    if (d == 0) ready.push(id);
  std::vector<AgentId> order;
  while (!ready.empty()) {
    AgentId u = ready.top();
    ready.pop();
    order.push_back(u);
    for (AgentId v : adj[u])
      if (--indegree[v] == 0) ready.push(v);
  }
  if (order.size() != indegree.size()) throw CycleError("spatial subgraph contains a cycle");
  return order;
}

// Fraction of the 2*n*(n-1) possible directed edges (both channels) present.
inline double edge_density(const CompositeTopology& topo) {
  const double n = static_cast<double>(topo.active_ids.size());
  if (n <= 1) return 0.0;
  return static_cast<double>(topo.spatial_edges.size() + topo.temporal_edges.size()) / (2.0 * n * (n - 1.0));
}

// True if `to` is reachable from `from` along spatial edges (a node reaches itself).
inline bool spatially_reaches(const std::set<Edge>& spatial, AgentId from, AgentId to) {
  if (from == to) return true;
  auto adj = detail::adjacency(spatial);
  std::vector<AgentId> frontier{from};
  std::set<AgentId> seen{from};
  while (!frontier.empty()) {
    AgentId u = frontier.back();
    frontier.pop_back();
    for (AgentId v : adj[u]) {
      if (v == to) return true;
      if (seen.insert(v).second) frontier.push_back(v);
    }
  }
  return false;
}

// --- serialization --------------------------------------------------------

inline nlohmann::ordered_json topology_to_json(const CompositeTopology& topo) {
  nlohmann::ordered_json j;
  j["active"] = topo.active_ids;
  auto edges = [](const std::set<Edge>& s) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& [u, v] : s) arr.push_back({u, v});
    return arr;
  };
  j["spatial"] = edges(topo.spatial_edges);
  j["temporal"] = edges(topo.temporal_edges);
  j["rounds"] = topo.rounds;
  return j;
}

inline std::string serialize_topology(const CompositeTopology& topo) {
  return topology_to_json(topo).dump();
}

inline CompositeTopology topology_from_json(const nlohmann::json& j) {
  CompositeTopology topo;
  topo.active_ids = j.at("active").get<std::vector<AgentId>>();
  std::sort(topo.active_ids.begin(), topo.active_ids.end());
  for (const auto& e : j.at("spatial")) topo.spatial_edges.insert({e.at(0).get<AgentId>(), e.at(1).get<AgentId>()});
  for (const auto& e : j.at("temporal")) topo.temporal_edges.insert({e.at(0).get<AgentId>(), e.at(1).get<AgentId>()});
  topo.rounds = j.at("rounds").get<int>();
  return topo;
}

inline CompositeTopology parse_topology(const std::string& text) {
  return topology_from_json(nlohmann::json::parse(text));
}

}  // namespace orbit
