#pragma once

// Run configuration: a single JSON document, strictly validated. Unknown keys
// and wrong types are rejected with the offending path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbit/budget.hpp"
#include "orbit/execution.hpp"
#include "orbit/graph.hpp"
#include "orbit/supernet.hpp"
#include "orbit/trainer.hpp"

namespace orbit {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct AgentConfig {
  AgentId id = 0;
  std::string role;
  std::string state;
  std::vector<std::string> skills;
  std::vector<double> embedding;  // only with embedding_source = "explicit"
};

struct PoolConfig {
  std::string embedding_source = "hashed";  // "hashed" | "explicit"
  std::size_t embedding_dim = 16;
  std::uint64_t embedding_seed = 29;
  std::vector<AgentConfig> agents;
};

struct OfflineRunConfig {
  OfflineConfig core;
  std::string utility = "suite_coverage";  // "suite_coverage" | "bandit"
  std::optional<Edge> bandit_edge;
  int domain = 0;
};

struct BudgetRunConfig {
  int k_max = 5;
  PredictorConfig predictor;
  int train_tasks = 600;
  int heldout_tasks = 200;
  int epochs = 60;
  double learning_rate = 3e-3;
};

struct PolicyRunConfig {
  std::size_t hidden_dim = 64;
  std::size_t proj_dim = 64;
  std::vector<std::size_t> mlp_hidden{64, 64};
  int rounds = 2;
};

struct TrainRunConfig {
  int episodes = 1000;
  int batch_size = 1;
};

struct EvalRunConfig {
  int tasks = 300;
  std::vector<int> sweep{0, 1, 2, 3, 4, 5};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  std::string backend = "mock";  // "mock" | "chat"
  int workers = 1;
  bool record_messages = false;
  PoolConfig pool;
  OfflineRunConfig offline;
  BudgetRunConfig budget;
  RewardConfig reward;
  PolicyRunConfig policy;
  SuiteConfig environment;
  TrainRunConfig train;
  EvalRunConfig eval;
};

// --- builtin defaults ------------------------------------------------------

// Eight agents: one holder per core skill, one per rare skill.
inline PoolConfig default_pool() {
  PoolConfig p;
  p.agents = {
      {0, "arithmetic solver", "works through calculations step by step", {"arithmetic"}, {}},
      {1, "reading analyst", "extracts facts from the problem text", {"reading"}, {}},
      {2, "logician", "checks the argument for consistency", {"logic"}, {}},
      {3, "geometer", "handles shapes, angles and areas", {"geometry"}, {}},
      {4, "statistician", "handles chance and counting", {"probability"}, {}},
      {5, "programmer", "writes and traces code", {"coding"}, {}},
      {6, "economist", "handles money, rates and interest", {"finance"}, {}},
      {7, "physicist", "handles motion, force and energy", {"physics"}, {}},
  };
  return p;
}

inline RunConfig default_run_config() {
  RunConfig c;
  c.pool = default_pool();
  c.offline.core.episodes = 5000;
  c.offline.core.learning_rate = 0.3;
  c.offline.core.sparsity_weight = 3.0;
  return c;
}

// --- pool construction -----------------------------------------------------

inline RolePool build_pool(const PoolConfig& cfg) {
  if (cfg.agents.empty()) throw ConfigError("pool.agents: at least one agent required");
  HashedNgramEncoder enc(cfg.embedding_dim, cfg.embedding_seed);
  std::vector<AgentSpec> agents;
  for (const auto& a : cfg.agents) {
    AgentSpec s;
    s.id = a.id;
    s.role = a.role;
    s.state = a.state;
    s.skills = a.skills;
    if (cfg.embedding_source == "explicit") {
      if (a.embedding.size() != cfg.embedding_dim)
        throw ConfigError("pool.agents[" + std::to_string(a.id) + "].embedding: expected " +
                          std::to_string(cfg.embedding_dim) + " entries");
      s.role_embedding = a.embedding;
    } else {
      std::string text = a.role + " |";
      for (const auto& sk : a.skills) text += " " + sk;
      s.role_embedding = enc.encode(text);
    }
    agents.push_back(std::move(s));
  }
  try {
    return RolePool(std::move(agents));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("pool: ") + e.what());
  }
}

// --- JSON reading -----------------------------------------------------------

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (it->get<long long>() < 0) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("expected a string");
      }
      out = it->get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::ObjectReader;
  using detail::require;
  RunConfig c = default_run_config();
  ObjectReader root(j, "");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("backend", c.backend);
  root.get("workers", c.workers);
  root.get("record_messages", c.record_messages);

  if (auto* pj = root.child("pool")) {
    ObjectReader r(*pj, "pool");
    r.get("embedding_source", c.pool.embedding_source);
    r.get("embedding_dim", c.pool.embedding_dim);
    r.get("embedding_seed", c.pool.embedding_seed);
    if (auto* aj = r.child("agents")) {
      require(aj->is_array(), "pool.agents: expected an array");
      c.pool.agents.clear();
      for (std::size_t i = 0; i < aj->size(); ++i) {
        ObjectReader ar((*aj)[i], "pool.agents[" + std::to_string(i) + "]");
        AgentConfig a;
        ar.get("id", a.id);
        ar.get("role", a.role);
        ar.get("state", a.state);
        ar.get("skills", a.skills);
        ar.get("embedding", a.embedding);
        ar.finish();
        require(!a.role.empty(), ar.where("role") + ": must be non-empty");
        c.pool.agents.push_back(std::move(a));
      }
    }
    r.finish();
  }

  if (auto* oj = root.child("offline")) {
    ObjectReader r(*oj, "offline");
    r.get("episodes", c.offline.core.episodes);
    r.get("learning_rate", c.offline.core.learning_rate);
    r.get("nucleus_size", c.offline.core.nucleus_size);
    r.get("rounds", c.offline.core.rounds);
    r.get("baseline_beta", c.offline.core.baseline_beta);
    r.get("sparsity_weight", c.offline.core.sparsity_weight);
    r.get("utility", c.offline.utility);
    r.get("domain", c.offline.domain);
    std::vector<AgentId> edge;
    r.get("bandit_edge", edge);
    if (!edge.empty()) {
      require(edge.size() == 2, "offline.bandit_edge: expected [u, v]");
      c.offline.bandit_edge = Edge{edge[0], edge[1]};
    }
    r.finish();
  }

  if (auto* bj = root.child("budget")) {
    ObjectReader r(*bj, "budget");
    r.get("k_max", c.budget.k_max);
    r.get("encoder_dim", c.budget.predictor.encoder_dim);
    r.get("encoder_seed", c.budget.predictor.encoder_seed);
    r.get("pca_dim", c.budget.predictor.pca_dim);
    r.get("whiten", c.budget.predictor.whiten);
    r.get("domain_dim", c.budget.predictor.domain_dim);
    r.get("hidden", c.budget.predictor.hidden);
    r.get("train_tasks", c.budget.train_tasks);
    r.get("heldout_tasks", c.budget.heldout_tasks);
    r.get("epochs", c.budget.epochs);
    r.get("learning_rate", c.budget.learning_rate);
    r.finish();
  }

  if (auto* rj = root.child("reward")) {
    ObjectReader r(*rj, "reward");
    r.get("lambda_cost", c.reward.lambda_cost);
    r.get("gamma_struct", c.reward.gamma_struct);
    r.get("margin", c.reward.margin);
    r.get("baseline_beta", c.reward.baseline_beta);
    r.get("advantage_eps", c.reward.advantage_eps);
    r.get("entropy_coef", c.reward.entropy_coef);
    r.get("learning_rate", c.reward.learning_rate);
    r.get("clip_norm", c.reward.clip_norm);
    r.finish();
  }

  if (auto* pj = root.child("policy")) {
    ObjectReader r(*pj, "policy");
    r.get("hidden_dim", c.policy.hidden_dim);
    r.get("proj_dim", c.policy.proj_dim);
    r.get("mlp_hidden", c.policy.mlp_hidden);
    r.get("rounds", c.policy.rounds);
    r.finish();
  }

  if (auto* ej = root.child("environment")) {
    ObjectReader r(*ej, "environment");
    r.get("core_skills", c.environment.core_skills);
    r.get("rare_skills", c.environment.rare_skills);
    r.get("easy_fraction", c.environment.easy_fraction);
    r.get("medium_fraction", c.environment.medium_fraction);
    r.get("count", c.environment.count);
    r.get("domain_id", c.environment.domain_id);
    r.get("max_skills", c.environment.max_skills);
    std::vector<int> e{c.environment.easy_size.first, c.environment.easy_size.second};
    std::vector<int> m{c.environment.medium_size.first, c.environment.medium_size.second};
    std::vector<int> h{c.environment.hard_size.first, c.environment.hard_size.second};
    r.get("easy_size", e);
    r.get("medium_size", m);
    r.get("hard_size", h);
    for (auto* v : {&e, &m, &h}) require(v->size() == 2 && (*v)[0] >= 1 && (*v)[0] <= (*v)[1], "environment: tier sizes must be [lo, hi] with 1 <= lo <= hi");
    c.environment.easy_size = {e[0], e[1]};
    c.environment.medium_size = {m[0], m[1]};
    c.environment.hard_size = {h[0], h[1]};
    r.finish();
  }

  if (auto* tj = root.child("train")) {
    ObjectReader r(*tj, "train");
    r.get("episodes", c.train.episodes);
    r.get("batch_size", c.train.batch_size);
    r.finish();
  }

  if (auto* vj = root.child("eval")) {
    ObjectReader r(*vj, "eval");
    r.get("tasks", c.eval.tasks);
    r.get("sweep", c.eval.sweep);
    r.finish();
  }
  root.finish();
  return c;
}

// Semantic checks that need more than one field.
inline void validate_run_config(const RunConfig& c) {
  using detail::require;
  require(c.backend == "mock" || c.backend == "chat", "backend: must be \"mock\" or \"chat\"");
  require(c.workers >= 1, "workers: must be >= 1");
  require(c.pool.embedding_source == "hashed" || c.pool.embedding_source == "explicit",
          "pool.embedding_source: must be \"hashed\" or \"explicit\"");
  require(c.pool.embedding_dim >= 1, "pool.embedding_dim: must be >= 1");
  const RolePool pool = build_pool(c.pool);
  const int n = static_cast<int>(pool.agents().size());
  require(n >= 2, "pool.agents: at least two agents required");
  require(c.offline.core.episodes >= 0, "offline.episodes: must be >= 0");
  require(c.offline.core.learning_rate > 0, "offline.learning_rate: must be > 0");
  require(c.offline.core.nucleus_size >= 1 && c.offline.core.nucleus_size <= n, "offline.nucleus_size: must be in [1, N]");
  require(c.offline.core.rounds >= 1, "offline.rounds: must be >= 1");
  require(c.offline.core.baseline_beta > 0 && c.offline.core.baseline_beta <= 1, "offline.baseline_beta: must be in (0, 1]");
  require(c.offline.core.sparsity_weight >= 0, "offline.sparsity_weight: must be >= 0");
  require(c.offline.utility == "suite_coverage" || c.offline.utility == "bandit",
          "offline.utility: must be \"suite_coverage\" or \"bandit\"");
  if (c.offline.utility == "bandit") {
    require(c.offline.bandit_edge.has_value(), "offline.bandit_edge: required for the bandit utility");
    const auto [u, v] = *c.offline.bandit_edge;
    require(u != v && pool.contains(u) && pool.contains(v), "offline.bandit_edge: endpoints must be distinct pool ids");
  }
  require(c.budget.k_max >= 0, "budget.k_max: must be >= 0");
  require(c.budget.predictor.pca_dim >= 1 && c.budget.predictor.pca_dim <= c.budget.predictor.encoder_dim,
          "budget.pca_dim: must be in [1, encoder_dim]");
  require(c.budget.train_tasks >= static_cast<int>(c.budget.predictor.pca_dim),
          "budget.train_tasks: must be at least pca_dim");
  require(c.budget.heldout_tasks >= 0 && c.budget.epochs >= 0 && c.budget.learning_rate > 0,
          "budget: heldout_tasks and epochs must be >= 0, learning_rate > 0");
  try {
    c.reward.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("reward: ") + e.what());
  }
  require(c.reward.learning_rate >= 0 && c.reward.clip_norm > 0, "reward: learning_rate >= 0 and clip_norm > 0 required");
  require(c.policy.hidden_dim >= 1 && c.policy.proj_dim >= 1, "policy: dimensions must be >= 1");
  require(c.policy.rounds >= 1, "policy.rounds: must be >= 1");
  require(!c.environment.core_skills.empty(), "environment.core_skills: must be non-empty");
  require(c.environment.count >= 1, "environment.count: must be >= 1");
  require(c.environment.easy_fraction >= 0 && c.environment.medium_fraction >= 0 &&
              c.environment.easy_fraction + c.environment.medium_fraction <= 1.0 + 1e-12,
          "environment: tier fractions must be non-negative and sum to at most 1");
  require(c.environment.max_skills >= c.environment.hard_size.second, "environment.max_skills: must cover the hard tier");
  require(c.train.episodes >= 0 && c.train.batch_size >= 1, "train: episodes >= 0 and batch_size >= 1 required");
  require(c.eval.tasks >= 1, "eval.tasks: must be >= 1");
  for (int k : c.eval.sweep) require(k >= 0, "eval.sweep: budgets must be >= 0");
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  RunConfig c = parse_run_config(j);
  validate_run_config(c);
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["backend"] = c.backend;
  j["workers"] = c.workers;
  j["record_messages"] = c.record_messages;
  auto& p = j["pool"];
  p["embedding_source"] = c.pool.embedding_source;
  p["embedding_dim"] = c.pool.embedding_dim;
  p["embedding_seed"] = c.pool.embedding_seed;
  p["agents"] = nlohmann::ordered_json::array();
  for (const auto& a : c.pool.agents) {
    nlohmann::ordered_json aj;
    aj["id"] = a.id;
    aj["role"] = a.role;
    aj["state"] = a.state;
    aj["skills"] = a.skills;
    if (!a.embedding.empty()) aj["embedding"] = a.embedding;
    p["agents"].push_back(aj);
  }
  auto& o = j["offline"];
  o["episodes"] = c.offline.core.episodes;
  o["learning_rate"] = c.offline.core.learning_rate;
  o["nucleus_size"] = c.offline.core.nucleus_size;
  o["rounds"] = c.offline.core.rounds;
  o["baseline_beta"] = c.offline.core.baseline_beta;
  o["sparsity_weight"] = c.offline.core.sparsity_weight;
  o["utility"] = c.offline.utility;
  o["domain"] = c.offline.domain;
  if (c.offline.bandit_edge) o["bandit_edge"] = {c.offline.bandit_edge->first, c.offline.bandit_edge->second};
  auto& b = j["budget"];
  b["k_max"] = c.budget.k_max;
  b["encoder_dim"] = c.budget.predictor.encoder_dim;
  b["encoder_seed"] = c.budget.predictor.encoder_seed;
  b["pca_dim"] = c.budget.predictor.pca_dim;
  b["whiten"] = c.budget.predictor.whiten;
  b["domain_dim"] = c.budget.predictor.domain_dim;
  b["hidden"] = c.budget.predictor.hidden;
  b["train_tasks"] = c.budget.train_tasks;
  b["heldout_tasks"] = c.budget.heldout_tasks;
  b["epochs"] = c.budget.epochs;
  b["learning_rate"] = c.budget.learning_rate;
  auto& r = j["reward"];
  r["lambda_cost"] = c.reward.lambda_cost;
  r["gamma_struct"] = c.reward.gamma_struct;
  r["margin"] = c.reward.margin;
  r["baseline_beta"] = c.reward.baseline_beta;
  r["advantage_eps"] = c.reward.advantage_eps;
  r["entropy_coef"] = c.reward.entropy_coef;
  r["learning_rate"] = c.reward.learning_rate;
  r["clip_norm"] = c.reward.clip_norm;
  auto& po = j["policy"];
  po["hidden_dim"] = c.policy.hidden_dim;
  po["proj_dim"] = c.policy.proj_dim;
  po["mlp_hidden"] = c.policy.mlp_hidden;
  po["rounds"] = c.policy.rounds;
  auto& e = j["environment"];
  e["core_skills"] = c.environment.core_skills;
  e["rare_skills"] = c.environment.rare_skills;
  e["easy_fraction"] = c.environment.easy_fraction;
  e["medium_fraction"] = c.environment.medium_fraction;
  e["count"] = c.environment.count;
  e["domain_id"] = c.environment.domain_id;
  e["max_skills"] = c.environment.max_skills;
  e["easy_size"] = {c.environment.easy_size.first, c.environment.easy_size.second};
  e["medium_size"] = {c.environment.medium_size.first, c.environment.medium_size.second};
  e["hard_size"] = {c.environment.hard_size.first, c.environment.hard_size.second};
  j["train"] = {{"episodes", c.train.episodes}, {"batch_size", c.train.batch_size}};
  j["eval"] = {{"tasks", c.eval.tasks}, {"sweep", c.eval.sweep}};
  return j;
}

}  // namespace orbit
