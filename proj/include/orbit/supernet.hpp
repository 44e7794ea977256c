#pragma once

// Offline phase: stochastic edge logits over the fully connected
// dual-channel supernet, trained by REINFORCE with an analytic sparsity
// prior, then condensed into a nucleus by expected-degree saliency.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "orbit/checkpoint.hpp"
#include "orbit/graph.hpp"
#include "orbit/nn.hpp"
#include "orbit/policy.hpp"
#include "orbit/rng.hpp"

namespace orbit {

struct SupernetParams {
  std::vector<AgentId> ids;        // supernet index -> agent id
  std::vector<double> spatial;     // N x N, diagonal unused
  std::vector<double> temporal;    // N x N, diagonal unused
  double sparsity_weight = 0.0;

  static SupernetParams zeros(std::vector<AgentId> ids, double sparsity_weight = 0.0, double init = 0.0) {
    SupernetParams p;
    const std::size_t n = ids.size();
    p.ids = std::move(ids);
    p.spatial.assign(n * n, init);
    p.temporal.assign(n * n, init);
    p.sparsity_weight = sparsity_weight;
    return p;
  }

  std::size_t size() const { return ids.size(); }
  double& s(std::size_t i, std::size_t j) { return spatial[i * size() + j]; }
  double s(std::size_t i, std::size_t j) const { return spatial[i * size() + j]; }
  double& t(std::size_t i, std::size_t j) { return temporal[i * size() + j]; }
  double t(std::size_t i, std::size_t j) const { return temporal[i * size() + j]; }

  std::size_t index_of(AgentId id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) throw std::out_of_range("agent not in supernet: " + std::to_string(id));
    return static_cast<std::size_t>(it - ids.begin());
  }

  TensorRegistry registry() {
    TensorRegistry r;
    r.add("supernet.spatial", size(), size(), spatial);
    r.add("supernet.temporal", size(), size(), temporal);
    return r;
  }
};

struct OfflineConfig {
  int episodes = 2000;
  double learning_rate = 0.1;
  int nucleus_size = 3;
  int rounds = 2;
  std::uint64_t seed = 0;
  double baseline_beta = 0.05;
  double sparsity_weight = 1.0;
};

struct SupernetSample {
  CompositeTopology topology;
  std::vector<DecisionRecord> decisions;  // evaluated only
  double log_probability = 0.0;
};

// All agents active. Spatial candidates follow the DAG skip rule; temporal
// edges are independent Bernoulli draws.
inline SupernetSample sample_supernet_topology(const SupernetParams& p, Rng& rng, int rounds = 2) {
  if (p.size() < 2) throw std::invalid_argument("supernet needs at least two agents");
  SupernetSample out;
  out.topology.active_ids = p.ids;
  std::sort(out.topology.active_ids.begin(), out.topology.active_ids.end());
  out.topology.rounds = std::max(rounds, 1);
  auto sl = [&](AgentId i, AgentId j) { return p.s(p.index_of(i), p.index_of(j)); };
  auto tl = [&](AgentId i, AgentId j) { return p.t(p.index_of(i), p.index_of(j)); };
  auto spatial = sample_spatial_dag(out.topology.active_ids, sl, rng);
  auto temporal = sample_temporal(out.topology.active_ids, tl, rng, out.topology.rounds);
  out.topology.spatial_edges = std::move(spatial.edges);
  out.topology.temporal_edges = std::move(temporal.edges);
  out.decisions = std::move(spatial.decisions);
  out.decisions.insert(out.decisions.end(), temporal.decisions.begin(), temporal.decisions.end());
  for (const auto& d : out.decisions) out.log_probability += std::log(d.probability);
  return out;
}

struct OfflineBaseline {
  double mean = 0.0;
  long count = 0;
};

struct OfflineUpdateOptions {
  bool reinforce = true;
  double learning_rate = 0.1;
  double baseline_beta = 0.05;
};

// One ascent step on E[U] - lambda * sum_k mean_ij sigma(theta^k_ij).
// Returns the advantage used.
inline double offline_update(SupernetParams& p, double utility, const SupernetSample& sample, OfflineBaseline& baseline,
                             const OfflineUpdateOptions& opt) {
  const std::size_t n = p.size();
  const double edges_per_channel = static_cast<double>(n * (n - 1));
  const double adv = opt.reinforce ? utility - baseline.mean : 0.0;
  std::vector<double> gs(n * n, 0.0), gt(n * n, 0.0);
  if (opt.reinforce) {
    for (const auto& d : sample.decisions) {
      const std::size_t i = p.index_of(d.ids[0]), j = p.index_of(d.ids[1]);
      const double theta = d.kind == DecisionKind::spatial ? p.s(i, j) : p.t(i, j);
      const double g = adv * ((d.accepted ? 1.0 : 0.0) - nn::sigmoid(clamp_logit(theta)));
      (d.kind == DecisionKind::spatial ? gs : gt)[i * n + j] += g;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      for (auto [theta, grad] : {std::pair{&p.s(i, j), &gs[i * n + j]}, std::pair{&p.t(i, j), &gt[i * n + j]}}) {
        const double sg = nn::sigmoid(*theta);
        *grad -= p.sparsity_weight * sg * (1.0 - sg) / edges_per_channel;
      }
    }
  for (std::size_t k = 0; k < n * n; ++k)
    if (!std::isfinite(gs[k]) || !std::isfinite(gt[k]))
      throw std::runtime_error("offline_update: non-finite gradient at logit " + std::to_string(k) +
                               " (utility " + std::to_string(utility) + ")");
  for (std::size_t k = 0; k < n * n; ++k) {
    if (k / n == k % n) continue;
    p.spatial[k] += opt.learning_rate * gs[k];
    p.temporal[k] += opt.learning_rate * gt[k];
  }
  if (opt.reinforce) {
    baseline.mean += opt.baseline_beta * (utility - baseline.mean);
    ++baseline.count;
  }
  return adv;
}

// S(v_i) = sum_{j != i} sigma(theta^S_ij) + sigma(theta^S_ji); temporal ignored.
inline std::vector<double> node_saliency(const SupernetParams& p) {
  const std::size_t n = p.size();
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s[i] += nn::sigmoid(p.s(i, j)) + nn::sigmoid(p.s(j, i));
  return s;
}

// Top-k agents by saliency; near-equal saliencies (1e-9) go to the lower id.
inline std::vector<AgentId> condense_nucleus(const std::vector<double>& saliency, const std::vector<AgentId>& ids, int k) {
  if (saliency.size() != ids.size()) throw std::invalid_argument("saliency and id lists differ in length");
  if (k < 1 || k > static_cast<int>(ids.size())) throw std::invalid_argument("nucleus size must be in [1, N]");
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (std::abs(saliency[a] - saliency[b]) > 1e-9) return saliency[a] > saliency[b];
    return ids[a] < ids[b];
  });
  std::vector<AgentId> out;
  for (int r = 0; r < k; ++r) out.push_back(ids[idx[static_cast<std::size_t>(r)]]);
  return out;
}

inline RolePool condense_pool(RolePool pool, const SupernetParams& p, int k) {
  pool.set_partition(condense_nucleus(node_saliency(p), p.ids, k));
  return pool;
}

}  // namespace orbit
