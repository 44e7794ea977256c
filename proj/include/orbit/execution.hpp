#pragma once

// Round-by-round execution of a composite topology against an agent
// backend, plus the synthetic skill-coverage environment used for training
// and evaluation without a language model.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "orbit/graph.hpp"
#include "orbit/rng.hpp"

namespace orbit {

struct AgentInput {
  int round = 1;
  std::string query;
  std::vector<Message> spatial_context;   // same-round predecessor messages
  std::vector<Message> temporal_context;  // previous-round messages
  std::string assembled;                  // flat prompt text
};

struct BackendError : std::runtime_error {
  BackendError(const std::string& what, bool retriable) : std::runtime_error(what), retriable(retriable) {}
  bool retriable;
};

class AgentBackend {
 public:
  virtual ~AgentBackend() = default;
  virtual Message respond(const AgentSpec& agent, const AgentInput& input) = 0;
};

inline long whitespace_tokens(std::string_view text) {
  long n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// Deterministic offline stand-in for a model: the reply is a 16-token digest
// of (agent id, round, input digest).
class MockBackend final : public AgentBackend {
 public:
  static constexpr long kCompletionTokens = 16;

  Message respond(const AgentSpec& agent, const AgentInput& input) override {
    Message m;
    m.sender_id = agent.id;
    m.round = input.round;
    std::uint64_t h = splitmix64(fnv1a64(input.assembled) ^ splitmix64(static_cast<std::uint64_t>(agent.id) * 1000003ULL +
                                                                       static_cast<std::uint64_t>(input.round)));
    std::string content;
    for (long k = 0; k < kCompletionTokens; ++k) {
      h = splitmix64(h);
      char buf[8];
      std::snprintf(buf, sizeof buf, "%04x", static_cast<unsigned>(h & 0xffff));
      if (k) content.push_back(' ');
      content += buf;
    }
    m.content = std::move(content);
    m.prompt_tokens = whitespace_tokens(input.assembled);
    m.completion_tokens = kCompletionTokens;
    return m;
  }
};

inline std::string assemble_input(const AgentSpec& agent, const RolePool& pool, const AgentInput& in) {
  std::ostringstream os;
  os << "role: " << agent.role << '\n';
  if (!agent.state.empty()) os << "state: " << agent.state << '\n';
  os << "query: " << in.query << '\n';
  for (const auto& m : in.spatial_context)
    os << "[" << pool.agent(m.sender_id).role << " round " << m.round << "] " << m.content << '\n';
  for (const auto& m : in.temporal_context)
    os << "[" << pool.agent(m.sender_id).role << " round " << m.round << "] " << m.content << '\n';
  return os.str();
}

struct ExecutionResult {
  std::vector<Message> messages;
  std::string final_answer;
  AgentId final_responder = -1;
  double utility = 0.0;
  long prompt_tokens_total = 0;
  long completion_tokens_total = 0;
  bool failed = false;
  std::string diagnostic;

  const Message* find(AgentId id, int round) const {
    for (const auto& m : messages)
      if (m.sender_id == id && m.round == round) return &m;
    return nullptr;
  }
};

// Runs every active agent in every round. Within round t an agent sees the
// round-t messages of its spatial predecessors and the round-(t-1) messages
// of its temporal predecessors. A failing agent is retried once; a second
// failure ends the episode with utility 0.
inline ExecutionResult execute(const CompositeTopology& topo, const RolePool& pool, const std::string& query,
                               AgentBackend& backend) {
  ExecutionResult res;
  const auto order = topological_order(topo);
  std::map<AgentId, std::vector<AgentId>> spatial_preds, temporal_preds;
  for (const auto& [u, v] : topo.spatial_edges) spatial_preds[v].push_back(u);
  for (const auto& [u, v] : topo.temporal_edges) temporal_preds[v].push_back(u);
  std::map<std::pair<AgentId, int>, std::size_t> index;

  for (int t = 1; t <= topo.rounds; ++t) {
    for (AgentId id : order) {
      const AgentSpec& agent = pool.agent(id);
      AgentInput in;
      in.round = t;
      in.query = query;
      for (AgentId u : spatial_preds[id]) in.spatial_context.push_back(res.messages[index.at({u, t})]);
      if (t > 1)
        for (AgentId u : temporal_preds[id]) in.temporal_context.push_back(res.messages[index.at({u, t - 1})]);
      in.assembled = assemble_input(agent, pool, in);
      Message msg;
      bool ok = false;
      std::string last_error;
      for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
        try {
          msg = backend.respond(agent, in);
          ok = true;
        } catch (const BackendError& e) {
          last_error = e.what();
        }
      }
      if (!ok) {
        res.failed = true;
        res.utility = 0.0;
        res.diagnostic = "agent " + std::to_string(id) + " round " + std::to_string(t) + " failed twice: " + last_error;
        return res;
      }
      msg.sender_id = id;
      msg.round = t;
      res.prompt_tokens_total += msg.prompt_tokens;
      res.completion_tokens_total += msg.completion_tokens;
      index[{id, t}] = res.messages.size();
      res.messages.push_back(std::move(msg));
    }
  }
  if (!order.empty()) {
    res.final_responder = order.back();
    res.final_answer = res.messages[index.at({order.back(), topo.rounds})].content;
  }
  return res;
}

// --- synthetic environment ------------------------------------------------

enum class Tier { easy, medium, hard };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::easy: return "easy";
    case Tier::medium: return "medium";
    case Tier::hard: return "hard";
  }
  return "?";
}

struct SyntheticTask {
  std::string id;
  std::string query_text;
  std::vector<std::string> required_skills;
  double difficulty = 0.0;
  Tier tier = Tier::easy;
  int domain_id = 0;
  std::uint64_t seed = 0;
};

inline double skill_coverage(const std::vector<std::string>& required, const std::set<std::string>& available) {
  if (required.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto& s : required) hit += available.count(s);
  return static_cast<double>(hit) / static_cast<double>(required.size());
}

inline AgentId final_responder(const CompositeTopology& topo) {
  const auto order = topological_order(topo);
  return order.empty() ? -1 : order.back();
}

// U = coverage * connectivity; connectivity is 1 when every active agent has
// a spatial path to the final responder and 0.5 otherwise.
inline double synthetic_utility(const SyntheticTask& task, const CompositeTopology& topo, const RolePool& pool) {
  std::set<std::string> skills;
  for (AgentId id : topo.active_ids)
    for (const auto& s : pool.agent(id).skills) skills.insert(s);
  const double coverage = skill_coverage(task.required_skills, skills);
  if (coverage == 0.0) return 0.0;
  const AgentId sink = final_responder(topo);
  bool connected = true;
  for (AgentId id : topo.active_ids)
    if (!spatially_reaches(topo.spatial_edges, id, sink)) {
      connected = false;
      break;
    }
  return coverage * (connected ? 1.0 : 0.5);
}

// Coverage counting only agents whose output can reach the responder (the
// final responder unless one is given).
inline double reachable_coverage(const SyntheticTask& task, const CompositeTopology& topo, const RolePool& pool,
                                 std::optional<AgentId> responder = std::nullopt) {
  const AgentId sink = responder ? *responder : final_responder(topo);
  std::set<std::string> skills;
  for (AgentId id : topo.active_ids)
    if (spatially_reaches(topo.spatial_edges, id, sink))
      for (const auto& s : pool.agent(id).skills) skills.insert(s);
  return skill_coverage(task.required_skills, skills);
}

// Mean of reachable_coverage over a task set and over every active agent as
// responder. Skills are bitmasks, so one evaluation costs a transitive closure
// plus one popcount per (responder, distinct task).
class SuiteCoverage {
 public:
  SuiteCoverage(const std::vector<SyntheticTask>& tasks, const RolePool& pool) {
    if (tasks.empty()) throw std::invalid_argument("SuiteCoverage: empty task set");
    std::map<std::string, int> index;
    auto mask_of = [&](const std::vector<std::string>& skills) {
      std::uint64_t m = 0;
      for (const auto& sk : skills) {
        auto [it, fresh] = index.try_emplace(sk, static_cast<int>(index.size()));
        if (it->second >= 64) throw std::invalid_argument("SuiteCoverage: more than 64 distinct skills");
        m |= std::uint64_t{1} << it->second;
      }
      return m;
    };
    std::map<std::uint64_t, int> counts;
    for (const auto& t : tasks) ++counts[mask_of(t.required_skills)];
    for (const auto& [m, c] : counts)
      if (m != 0) task_masks_.push_back({m, static_cast<double>(c) / static_cast<double>(tasks.size())});
    for (const auto& a : pool.agents()) agent_masks_[a.id] = mask_of(a.skills);
  }

  double operator()(const CompositeTopology& topo) const {
    const auto& ids = topo.active_ids;
    const std::size_t n = ids.size();
    if (n == 0) return 0.0;
    std::map<AgentId, std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i) pos[ids[i]] = i;
    // reach[i][j]: i reaches j along spatial edges (reflexive).
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& [u, v] : topo.spatial_edges) adj[pos.at(u)].push_back(pos.at(v));
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<std::size_t> stack{s};
      reach[s][s] = true;
      while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        for (std::size_t v : adj[u])
          if (!reach[s][v]) reach[s][v] = true, stack.push_back(v);
      }
    }
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      std::uint64_t have = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (reach[i][r]) have |= agent_masks_.at(ids[i]);
      for (const auto& [m, w] : task_masks_)
        total += w * static_cast<double>(std::popcount(have & m)) / static_cast<double>(std::popcount(m));
    }
    return total / static_cast<double>(n);
  }

 private:
  std::vector<std::pair<std::uint64_t, double>> task_masks_;
  std::map<AgentId, std::uint64_t> agent_masks_;
};

struct SuiteConfig {
  std::vector<std::string> core_skills{"arithmetic", "reading", "logic"};
  std::vector<std::string> rare_skills{"geometry", "probability", "coding", "finance", "physics"};
  double easy_fraction = 1.0 / 3.0;
  double medium_fraction = 1.0 / 3.0;
  int count = 300;
  int domain_id = 0;
  int max_skills = 6;
  std::pair<int, int> easy_size{1, 2};
  std::pair<int, int> medium_size{3, 4};
  std::pair<int, int> hard_size{5, 6};
};

namespace detail {

inline std::string random_clause(Rng& rng, bool symbolic) {
  static const char* vars = "xyzmnpqk";
  const int a = 2 + static_cast<int>(uniform_index(rng, 18));
  const int b = 1 + static_cast<int>(uniform_index(rng, 40));
  const char v = vars[uniform_index(rng, 8)];
  std::ostringstream os;
  if (symbolic) {
    switch (uniform_index(rng, 3)) {
      case 0: os << "solve (" << a << "*" << v << " + " << b << ") = " << a * 3 + b; break;
      case 1: os << "check " << v << " >= " << b << " && " << v << " <= " << a * b; break;
      default: os << "compute " << a << "/" << b << " - " << v << "^2"; break;
    }
  } else {
    static const char* words[] = {"review the notes", "summarise the case", "explain the idea", "give the answer"};
    os << words[uniform_index(rng, 4)];
  }
  return os.str();
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace detail

// Tiers map to required-skill counts; Easy draws only core skills, the other
// tiers one core skill plus rare ones. Symbol density grows with the count.
inline std::vector<SyntheticTask> generate_task_suite(const SuiteConfig& cfg, std::uint64_t seed) {
  if (cfg.core_skills.empty()) throw std::invalid_argument("suite needs at least one core skill");
  std::vector<SyntheticTask> out;
  for (int n = 0; n < cfg.count; ++n) {
    Rng rng = make_rng(seed, "task", static_cast<std::uint64_t>(n));
    SyntheticTask task;
    task.seed = split_seed(seed, "task", static_cast<std::uint64_t>(n));
    task.domain_id = cfg.domain_id;
    const double u = uniform01(rng);
    task.tier = u < cfg.easy_fraction ? Tier::easy : (u < cfg.easy_fraction + cfg.medium_fraction ? Tier::medium : Tier::hard);
    auto range = task.tier == Tier::easy ? cfg.easy_size : task.tier == Tier::medium ? cfg.medium_size : cfg.hard_size;
    const int size = range.first + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(range.second - range.first + 1)));
    std::vector<std::string> core(cfg.core_skills), rare(cfg.rare_skills);
    detail::shuffle(core, rng);
    detail::shuffle(rare, rng);
    if (task.tier == Tier::easy) {
      for (int k = 0; k < size && k < static_cast<int>(core.size()); ++k) task.required_skills.push_back(core[k]);
    } else {
      task.required_skills.push_back(core[0]);
      for (std::size_t k = 0; static_cast<int>(task.required_skills.size()) < size && k < rare.size(); ++k)
        task.required_skills.push_back(rare[k]);
      for (std::size_t k = 1; static_cast<int>(task.required_skills.size()) < size && k < core.size(); ++k)
        task.required_skills.push_back(core[k]);
    }
    std::sort(task.required_skills.begin(), task.required_skills.end());
    task.difficulty = static_cast<double>(task.required_skills.size()) / static_cast<double>(cfg.max_skills);

    std::ostringstream q;
    q << "needs:";
    for (const auto& s : task.required_skills) q << ' ' << s;
    q << ".";
    const int clauses = static_cast<int>(task.required_skills.size());
    for (int c = 0; c < clauses; ++c) q << ' ' << detail::random_clause(rng, c % 2 == 0 || task.tier == Tier::hard) << ';';
    q << " what is the result?";
    task.query_text = q.str();
    task.id = "task-" + std::to_string(n);
    out.push_back(std::move(task));
  }
  return out;
}

}  // namespace orbit
