#pragma once

// REINFORCE training of the electron policy: composite reward, moving
// baseline advantage, length-normalised edge surrogate and the dual-margin
// structural hierarchy loss.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "orbit/graph.hpp"
#include "orbit/nn.hpp"
#include "orbit/policy.hpp"

namespace orbit {

struct RewardConfig {
  double lambda_cost = 0.2;
  double gamma_struct = 0.1;
  double margin = 0.1;
  double baseline_beta = 0.01;
  double advantage_eps = 1e-4;
  double entropy_coef = 0.0;  // off unless explicitly requested
  double learning_rate = 0.05;
  double clip_norm = 5.0;

  void validate() const {
    for (double v : {lambda_cost, gamma_struct, margin, baseline_beta, advantage_eps, entropy_coef, learning_rate, clip_norm})
      if (!std::isfinite(v)) throw std::invalid_argument("reward config contains a non-finite value");
    if (lambda_cost < 0 || gamma_struct < 0) throw std::invalid_argument("lambda_cost and gamma_struct must be >= 0");
    if (margin <= 0) throw std::invalid_argument("margin must be > 0");
    if (!(baseline_beta > 0 && baseline_beta <= 1)) throw std::invalid_argument("baseline_beta must be in (0, 1]");
    if (advantage_eps <= 0) throw std::invalid_argument("advantage_eps must be > 0");
  }
};

// R = r_task - lambda_cost * |E_active| / |E_max|
inline double compute_reward(double r_task, const CompositeTopology& topo, double lambda_cost) {
  return r_task - lambda_cost * edge_density(topo);
}

struct BaselineState {
  double mean = 0.0;
  double stddev = 0.0;
  long count = 0;

  // Returns (R - b) / (s + eps), then moves b and s toward R.
  double advance(double reward, double beta, double eps) {
    const double adv = (reward - mean) / (stddev + eps);
    const double diff = reward - mean;
    const double var = (1.0 - beta) * (stddev * stddev + beta * diff * diff);
    mean += beta * diff;
    stddev = std::sqrt(var);
    ++count;
    return adv;
  }
};

inline double channel_mean(std::span<const double> logps) {
  if (logps.empty()) return 0.0;
  double s = 0.0;
  for (double v : logps) s += v;
  return s / static_cast<double>(logps.size());
}

// (1/T_S) sum log pi(a_t) + (1/T_T) sum log pi(b_t); empty channels add 0.
inline double edge_surrogate(std::span<const double> spatial_logps, std::span<const double> temporal_logps) {
  return channel_mean(spatial_logps) + channel_mean(temporal_logps);
}

inline nn::Var edge_surrogate(nn::Tape& t, const std::vector<nn::Var>& spatial, const std::vector<nn::Var>& temporal) {
  nn::Var total = t.constant(0.0);
  for (const auto* ch : {&spatial, &temporal})
    if (!ch->empty()) total = t.add(total, t.mean(t.concat(std::span<const nn::Var>(*ch))));
  return total;
}

// sum_{k in nn, ne} max(0, m - (mean rho_k - mean rho_ee)). An empty class
// contributes nothing; an empty ee class makes the whole loss 0.
inline double structural_loss(std::span<const double> rho_nn, std::span<const double> rho_ne,
                              std::span<const double> rho_ee, double margin) {
  if (rho_ee.empty()) return 0.0;
  const double ee = channel_mean(rho_ee);
  double loss = 0.0;
  for (auto cls : {rho_nn, rho_ne})
    if (!cls.empty()) loss += std::max(0.0, margin - (channel_mean(cls) - ee));
  return loss;
}

inline double structural_loss_from_means(double mean_nn, double mean_ne, double mean_ee, double margin) {
  return std::max(0.0, margin - (mean_nn - mean_ee)) + std::max(0.0, margin - (mean_ne - mean_ee));
}

inline nn::Var structural_loss(nn::Tape& t, const std::vector<nn::Var>& rho_nn, const std::vector<nn::Var>& rho_ne,
                               const std::vector<nn::Var>& rho_ee, double margin) {
  nn::Var total = t.constant(0.0);
  if (rho_ee.empty()) return total;
  nn::Var ee = t.mean(t.concat(std::span<const nn::Var>(rho_ee)));
  for (const auto* cls : {&rho_nn, &rho_ne}) {
    if (cls->empty()) continue;
    nn::Var gap = t.sub(t.mean(t.concat(std::span<const nn::Var>(*cls))), ee);
    total = t.add(total, t.relu(t.sub(t.constant(margin), gap)));
  }
  return total;
}

// Mean Bernoulli entropy of the dense routing probabilities.
inline nn::Var routing_entropy(nn::Tape& t, const PolicyRollout& r) {
  std::vector<nn::Var> all;
  for (const auto* cls : {&r.rho_nn, &r.rho_ne, &r.rho_ee}) all.insert(all.end(), cls->begin(), cls->end());
  if (all.empty()) return t.constant(0.0);
  nn::Var p = t.concat(std::span<const nn::Var>(all));
  nn::Var q = t.sub(t.constant(nn::Vec(t.value(p).size(), 1.0)), p);
  return t.scale(t.mean(t.add(t.mul(p, t.log(p)), t.mul(q, t.log(q)))), -1.0);
}

struct ScoredRollout {
  PolicyRollout* rollout = nullptr;
  double r_task = 0.0;
  std::string id;
};

struct TrainMetrics {
  double reward_mean = 0.0;
  double r_task_mean = 0.0;
  double density_mean = 0.0;
  double l_struct = 0.0;
  double baseline = 0.0;
  double budget_mean = 0.0;
  double active_electrons_mean = 0.0;
  double advantage_mean = 0.0;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> l_structs;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ascends J = E[(log pi(V_active|q) + l_edge) * A] - gamma * L_struct with
// A held constant; SGD with global-norm clipping.
inline TrainMetrics train_step(std::vector<ScoredRollout>& batch, PolicyParams& params, const RewardConfig& cfg,
                               BaselineState& baseline) {
  TrainMetrics m;
  if (batch.empty()) return m;
  auto plist = params.parameters();
  nn::zero_grad(plist);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (auto& item : batch) {
    auto& r = *item.rollout;
    nn::Tape& t = *r.tape;
    const double density = edge_density(r.topology);
    const double reward = compute_reward(item.r_task, r.topology, cfg.lambda_cost);
    const double adv = baseline.advance(reward, cfg.baseline_beta, cfg.advantage_eps);
    nn::Var score = t.add(r.activation_log_prob, edge_surrogate(t, r.spatial_log_probs, r.temporal_log_probs));
    nn::Var lstruct = structural_loss(t, r.rho_nn, r.rho_ne, r.rho_ee, cfg.margin);
    nn::Var objective = t.sub(t.scale(score, adv), t.scale(lstruct, cfg.gamma_struct));
    if (cfg.entropy_coef > 0) objective = t.add(objective, t.scale(routing_entropy(t, r), cfg.entropy_coef));
    nn::Var loss = t.scale(objective, -inv_b);
    if (!std::isfinite(t.scalar(loss))) throw NonFiniteError("non-finite loss in trace " + item.id);
    t.backward(loss);

    m.reward_mean += reward * inv_b;
    m.r_task_mean += item.r_task * inv_b;
    m.density_mean += density * inv_b;
    m.l_struct += t.scalar(lstruct) * inv_b;
    m.budget_mean += r.budget * inv_b;
    m.active_electrons_mean += r.activation.active_count() * inv_b;
    m.advantage_mean += adv * inv_b;
    m.rewards.push_back(reward);
    m.advantages.push_back(adv);
    m.l_structs.push_back(t.scalar(lstruct));
  }
  if (!nn::grads_finite(plist)) throw NonFiniteError("non-finite gradient in batch starting at trace " + batch.front().id);
  nn::Sgd{cfg.learning_rate, cfg.clip_norm}.step(plist);
  if (!nn::all_finite(plist)) throw NonFiniteError("non-finite parameters after update");
  m.baseline = baseline.mean;
  return m;
}

}  // namespace orbit
