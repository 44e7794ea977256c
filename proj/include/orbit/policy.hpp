#pragma once

// Online electron policy: query-conditioned agent states, budgeted electron
// activation, and dual-channel (spatial DAG + temporal) edge synthesis.

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "orbit/checkpoint.hpp"
#include "orbit/graph.hpp"
#include "orbit/nn.hpp"
#include "orbit/partition.hpp"
#include "orbit/rng.hpp"
#include "orbit/trace.hpp"

namespace orbit {

struct PolicyConfig {
  std::size_t feature_dim = 40;  // composite query features x_q
  std::size_t embed_dim = 16;    // d0: role embeddings and f_q
  std::size_t hidden_dim = 16;   // d_h: agent states h_i
  std::size_t proj_dim = 16;     // psi_K / psi_Q output
  std::vector<std::size_t> mlp_hidden{64, 64};
  double layer_norm_eps = 1e-5;
};

struct PolicyParams {
  PolicyConfig config;
  nn::DenseParams query_map;  // x_q -> f_q
  nn::DenseParams w_in;
  nn::DenseParams w_gate;
  nn::DenseParams w_ctx;
  nn::Mlp node_scorer;
  nn::DenseParams proj_k;
  nn::DenseParams proj_q;
  nn::Mlp edge_spatial;
  nn::Mlp edge_temporal;

  static PolicyParams init(const PolicyConfig& cfg, Rng& rng) {
    PolicyParams p;
    p.config = cfg;
    const auto d0 = cfg.embed_dim, dh = cfg.hidden_dim;
    p.query_map = nn::DenseParams::random(cfg.feature_dim, d0, rng);
    p.w_in = nn::DenseParams::random(d0, dh, rng);
    p.w_gate = nn::DenseParams::random(d0, dh, rng);
    p.w_ctx = nn::DenseParams::random(d0, dh, rng);
    p.node_scorer = nn::Mlp::make(4 * dh, cfg.mlp_hidden, 1, nn::OutputActivation::linear, rng);
    p.proj_k = nn::DenseParams::random(d0, cfg.proj_dim, rng);
    p.proj_q = nn::DenseParams::random(d0, cfg.proj_dim, rng);
    p.edge_spatial = nn::Mlp::make(4 * dh, cfg.mlp_hidden, 1, nn::OutputActivation::linear, rng);
    p.edge_temporal = nn::Mlp::make(4 * dh, cfg.mlp_hidden, 1, nn::OutputActivation::linear, rng);
    return p;
  }

  nn::ParamList parameters() {
    nn::ParamList l{&query_map, &w_in, &w_gate, &w_ctx, &proj_k, &proj_q};
    nn::append(l, node_scorer);
    nn::append(l, edge_spatial);
    nn::append(l, edge_temporal);
    return l;
  }

  TensorRegistry registry() {
    TensorRegistry r;
    r.add("query_map", query_map);
    r.add("w_in", w_in);
    r.add("w_gate", w_gate);
    r.add("w_ctx", w_ctx);
    r.add("node_scorer", node_scorer);
    r.add("proj_k", proj_k);
    r.add("proj_q", proj_q);
    r.add("edge_spatial", edge_spatial);
    r.add("edge_temporal", edge_temporal);
    return r;
  }
};

// --- differentiable building blocks ---------------------------------------

struct QueryContext {
  nn::Var f_q;   // d0
  nn::Var ctx;   // W_ctx f_q
  nn::Var gate;  // sigma(W_gate f_q)
};

inline QueryContext query_context(nn::Tape& t, PolicyParams& p, nn::Var f_q) {
  if (t.value(f_q).size() != p.config.embed_dim) throw nn::ShapeError("query vector must have dimension d0");
  return {f_q, t.dense(p.w_ctx, f_q), t.sigmoid(t.dense(p.w_gate, f_q))};
}

// h_i = LayerNorm((W_in e_i) * sigma(W_gate f_q) + W_ctx f_q)
inline nn::Var condition_state(nn::Tape& t, PolicyParams& p, const QueryContext& q, std::span<const double> role_embedding) {
  if (role_embedding.size() != p.config.embed_dim) throw nn::ShapeError("role embedding must have dimension d0");
  nn::Var e = t.constant(nn::Vec(role_embedding.begin(), role_embedding.end()));
  return t.layer_norm(t.add(t.mul(t.dense(p.w_in, e), q.gate), q.ctx), p.config.layer_norm_eps);
}

// alpha_i = Phi_node(Psi_rel(h_i, W_ctx f_q)) + cos(psi_K(e_i), psi_Q(f_q))
inline nn::Var activation_logit(nn::Tape& t, PolicyParams& p, const QueryContext& q, nn::Var h,
                                std::span<const double> role_embedding) {
  nn::Var e = t.constant(nn::Vec(role_embedding.begin(), role_embedding.end()));
  nn::Var rel = t.mlp(p.node_scorer, nn::dyadic(t, h, q.ctx));
  nn::Var align = t.cosine(t.dense(p.proj_k, e), t.dense(p.proj_q, q.f_q));
  return t.add(rel, align);
}

struct EdgeLogitVars {
  nn::Var spatial;
  nn::Var temporal;
};

inline EdgeLogitVars edge_logits(nn::Tape& t, PolicyParams& p, nn::Var h_i, nn::Var h_j) {
  nn::Var z = nn::dyadic(t, h_i, h_j);
  return {t.mlp(p.edge_spatial, z), t.mlp(p.edge_temporal, z)};
}

// --- plain-value wrappers -------------------------------------------------

struct ConditionedStates {
  std::map<AgentId, nn::Vec> states;
  std::size_t evaluations = 0;  // one per agent
};

inline ConditionedStates condition_states(PolicyParams& p, const RolePool& pool, std::span<const double> f_q) {
  nn::Tape t;
  auto q = query_context(t, p, t.constant(nn::Vec(f_q.begin(), f_q.end())));
  ConditionedStates out;
  for (const auto& a : pool.agents()) {
    out.states[a.id] = t.value(condition_state(t, p, q, a.role_embedding));
    ++out.evaluations;
  }
  return out;
}

inline std::pair<double, double> edge_logits(PolicyParams& p, std::span<const double> h_i, std::span<const double> h_j) {
  nn::Tape t;
  auto l = edge_logits(t, p, t.constant(nn::Vec(h_i.begin(), h_i.end())), t.constant(nn::Vec(h_j.begin(), h_j.end())));
  return {t.scalar(l.spatial), t.scalar(l.temporal)};
}

// --- edge sampling --------------------------------------------------------

struct EdgeSample {
  std::set<Edge> edges;
  std::vector<DecisionRecord> decisions;  // evaluated decisions only
};

// Ordered pairs (i, j), i != j, ascending. A candidate that would close a
// cycle with already-accepted edges is skipped without sampling.
template <class LogitFn>
EdgeSample sample_spatial_dag(const std::vector<AgentId>& active, LogitFn&& logit, Rng& rng) {
  EdgeSample s;
  std::vector<AgentId> ids(active);
  std::sort(ids.begin(), ids.end());
  for (AgentId i : ids)
    for (AgentId j : ids) {
      if (i == j) continue;
      if (spatially_reaches(s.edges, j, i)) continue;
      const double l = clamp_logit(logit(i, j));
      const double p = nn::sigmoid(l);
      const bool take = bernoulli(rng, p);
      if (take) s.edges.insert({i, j});
      s.decisions.push_back({DecisionKind::spatial, {i, j}, l, take ? p : 1.0 - p, take});
    }
  return s;
}

// Independent Bernoulli per ordered pair; empty when there is no prior round.
template <class LogitFn>
EdgeSample sample_temporal(const std::vector<AgentId>& active, LogitFn&& logit, Rng& rng, int rounds) {
  EdgeSample s;
  if (rounds < 2) return s;
  std::vector<AgentId> ids(active);
  std::sort(ids.begin(), ids.end());
  for (AgentId i : ids)
    for (AgentId j : ids) {
      if (i == j) continue;
      const double l = clamp_logit(logit(i, j));
      const double p = nn::sigmoid(l);
      const bool take = bernoulli(rng, p);
      if (take) s.edges.insert({i, j});
      s.decisions.push_back({DecisionKind::temporal, {i, j}, l, take ? p : 1.0 - p, take});
    }
  return s;
}

// --- full rollout ---------------------------------------------------------

enum class EdgeClass { nucleus_nucleus, nucleus_electron, electron_electron };

// One sampled topology with everything needed to differentiate its
// log-probability later. The tape is owned by the rollout.
struct PolicyRollout {
  std::unique_ptr<nn::Tape> tape = std::make_unique<nn::Tape>();
  CompositeTopology topology;
  int budget = 0;
  std::vector<AgentId> electron_order;
  ActivationDecision activation;
  std::vector<DecisionRecord> decisions;

  nn::Var activation_log_prob;
  std::vector<nn::Var> spatial_log_probs;   // evaluated decisions
  std::vector<nn::Var> temporal_log_probs;
  // Dense pre-sampling probabilities by node-partition class (both channels).
  std::vector<nn::Var> rho_nn, rho_ne, rho_ee;
  std::size_t state_evaluations = 0;
};

struct RolloutOptions {
  int rounds = 2;
  std::optional<std::vector<AgentId>> forced_electrons;  // replay / diagnostics
};

inline PolicyRollout sample_topology(PolicyParams& p, const RolePool& pool, std::span<const double> x_q, int budget,
                                     Rng& rng, const RolloutOptions& opt = {}) {
  PolicyRollout r;
  r.budget = std::max(0, budget);
  nn::Tape& t = *r.tape;
  nn::Var f_q = t.dense(p.query_map, t.constant(nn::Vec(x_q.begin(), x_q.end())));
  auto q = query_context(t, p, f_q);

  std::map<AgentId, nn::Var> h;
  for (const auto& a : pool.agents()) {
    h[a.id] = condition_state(t, p, q, a.role_embedding);
    ++r.state_evaluations;
  }

  // Electron activation under the hard budget.
  r.electron_order = pool.electron_ids();
  std::vector<nn::Var> alphas;
  for (AgentId id : r.electron_order) alphas.push_back(activation_logit(t, p, q, h[id], pool.agent(id).role_embedding));
  std::vector<AgentId> active(pool.nucleus_ids());
  if (!alphas.empty()) {
    nn::Var alpha = t.clamp(t.concat(std::span<const nn::Var>(alphas)), -kLogitClamp, kLogitClamp);
    auto table = PartitionTable::build(t.value(alpha), r.budget);
    if (opt.forced_electrons) {
      ActivationDecision d;
      d.budget = table.budget();
      d.logits = table.log_odds();
      int rem = table.budget();
      for (std::size_t i = 0; i < r.electron_order.size(); ++i) {
        const bool take = std::count(opt.forced_electrons->begin(), opt.forced_electrons->end(), r.electron_order[i]) > 0;
        const double pa = table.accept_probability(i, rem);
        d.remaining.push_back(rem);
        d.accept_probability.push_back(pa);
        d.chosen_probability.push_back(take ? pa : 1.0 - pa);
        d.indicator.push_back(take ? 1 : 0);
        if (take) --rem;
      }
      r.activation = std::move(d);
    } else {
      r.activation = sample_activation(table, rng);
    }
    for (std::size_t i = 0; i < r.electron_order.size(); ++i) {
      const bool on = r.activation.indicator[i] != 0;
      if (on) active.push_back(r.electron_order[i]);
      r.decisions.push_back({DecisionKind::activate, {r.electron_order[i]}, r.activation.logits[i],
                             r.activation.chosen_probability[i], on});
    }
    r.activation_log_prob = activation_log_probability(t, alpha, r.activation.indicator, r.budget);
  } else {
    r.activation_log_prob = t.constant(0.0);
  }
  std::sort(active.begin(), active.end());
  r.topology.active_ids = active;
  r.topology.rounds = opt.rounds;

  // Dense routing logits for every ordered active pair.
  std::map<Edge, EdgeLogitVars> logits;
  for (AgentId i : active)
    for (AgentId j : active) {
      if (i == j) continue;
      auto l = edge_logits(t, p, h[i], h[j]);
      l.spatial = t.clamp(l.spatial, -kLogitClamp, kLogitClamp);
      l.temporal = t.clamp(l.temporal, -kLogitClamp, kLogitClamp);
      logits[{i, j}] = l;
      const bool ni = pool.is_nucleus(i), nj = pool.is_nucleus(j);
      auto& bucket = (ni && nj) ? r.rho_nn : (ni || nj) ? r.rho_ne : r.rho_ee;
      bucket.push_back(t.sigmoid(l.spatial));
      bucket.push_back(t.sigmoid(l.temporal));
    }

  auto spatial = sample_spatial_dag(active, [&](AgentId i, AgentId j) { return t.scalar(logits[{i, j}].spatial); }, rng);
  auto temporal = sample_temporal(active, [&](AgentId i, AgentId j) { return t.scalar(logits[{i, j}].temporal); }, rng, opt.rounds);
  for (const auto& d : spatial.decisions) {
    nn::Var l = logits[{d.ids[0], d.ids[1]}].spatial;
    r.spatial_log_probs.push_back(t.log_sigmoid(d.accepted ? l : t.scale(l, -1.0)));
  }
  for (const auto& d : temporal.decisions) {
    nn::Var l = logits[{d.ids[0], d.ids[1]}].temporal;
    r.temporal_log_probs.push_back(t.log_sigmoid(d.accepted ? l : t.scale(l, -1.0)));
  }
  r.topology.spatial_edges = std::move(spatial.edges);
  r.topology.temporal_edges = std::move(temporal.edges);
  r.decisions.insert(r.decisions.end(), spatial.decisions.begin(), spatial.decisions.end());
  r.decisions.insert(r.decisions.end(), temporal.decisions.begin(), temporal.decisions.end());
  return r;
}

}  // namespace orbit
