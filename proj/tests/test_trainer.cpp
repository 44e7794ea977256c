#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "orbit/trainer.hpp"

using namespace orbit;

namespace {

CompositeTopology topo_with_density(int n, int edges) {
  CompositeTopology t;
  for (int i = 0; i < n; ++i) t.active_ids.push_back(i);
  t.rounds = 2;
  int placed = 0;
  for (int i = 0; i < n && placed < edges; ++i)
    for (int j = i + 1; j < n && placed < edges; ++j, ++placed) t.spatial_edges.insert({i, j});
  return t;
}

RolePool pool_with_nucleus(int n, int nucleus, std::size_t d0, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AgentSpec> agents;
  for (int i = 0; i < n; ++i) {
    AgentSpec a{i, "r" + std::to_string(i), "", {}, std::vector<double>(d0)};
    for (double& v : a.role_embedding) v = uniform(rng, -1, 1);
    agents.push_back(a);
  }
  RolePool pool(agents);
  std::vector<AgentId> nuc;
  for (int i = 0; i < nucleus; ++i) nuc.push_back(i);
  pool.set_partition(nuc);
  return pool;
}

PolicyConfig tiny() {
  PolicyConfig c;
  c.feature_dim = 4;
  c.embed_dim = 3;
  c.hidden_dim = 3;
  c.proj_dim = 2;
  c.mlp_hidden = {4};
  return c;
}

}  // namespace

TEST(Reward, Examples) {
  // 3 agents: E_max = 2 * 3 * 2 = 12; 3 edges -> density 0.25.
  auto t = topo_with_density(3, 3);
  ASSERT_DOUBLE_EQ(edge_density(t), 0.25);
  EXPECT_DOUBLE_EQ(compute_reward(1.0, t, 0.2), 0.95);
  EXPECT_DOUBLE_EQ(compute_reward(0.6, t, 0.0), 0.6);
  EXPECT_DOUBLE_EQ(compute_reward(0.6, topo_with_density(4, 0), 0.2), 0.6);
}

TEST(Baseline, FirstEpisodeExample) {
  BaselineState b;
  EXPECT_DOUBLE_EQ(b.advance(1.0, 0.1, 1e-4), 1e4);
  EXPECT_DOUBLE_EQ(b.mean, 0.1);
  EXPECT_GE(b.stddev, 0.0);
  BaselineState c{0.4, 0.2, 3};
  EXPECT_EQ(c.advance(0.4, 0.1, 1e-4), 0.0);
}

TEST(Baseline, ConstantRewardsDriveAdvantageToZero) {
  BaselineState b;
  double adv = 1;
  for (int i = 0; i < 3000; ++i) adv = b.advance(0.7, 0.01, 1e-4);
  EXPECT_LT(std::abs(adv), 0.05);
  EXPECT_NEAR(b.mean, 0.7, 1e-9);
}

TEST(Baseline, StandardisedAdvantageWindowMean) {
  Rng rng(3);
  BaselineState b;
  std::vector<double> adv;
  for (int i = 0; i < 3000; ++i) {
    const double r = 0.3 + 0.4 * uniform01(rng) + (i > 1500 ? 0.2 : 0.0);
    adv.push_back(b.advance(r, 0.01, 1e-4));
  }
  for (std::size_t start = 500; start + 500 <= adv.size(); start += 250) {
    double m = 0;
    for (std::size_t i = start; i < start + 500; ++i) m += adv[i] / 500;
    EXPECT_GE(m, -0.5) << start;
    EXPECT_LE(m, 0.5) << start;
  }
}

TEST(EdgeSurrogate, Examples) {
  std::vector<double> half(5, std::log(0.5)), half2(9, std::log(0.5));
  EXPECT_DOUBLE_EQ(edge_surrogate(half, half2), 2 * std::log(0.5));
  EXPECT_DOUBLE_EQ(edge_surrogate(half, {}), std::log(0.5));
  std::vector<double> doubled(10, std::log(0.5));
  EXPECT_DOUBLE_EQ(edge_surrogate(doubled, doubled), edge_surrogate(half, half));
  std::vector<double> a{-0.1, -2.0, -0.7}, b{-0.7, -0.1, -2.0};
  EXPECT_DOUBLE_EQ(edge_surrogate(a, {}), edge_surrogate(b, {}));
}

TEST(StructuralLoss, Examples) {
  EXPECT_DOUBLE_EQ(structural_loss_from_means(0.6, 0.5, 0.2, 0.1), 0.0);
  EXPECT_NEAR(structural_loss_from_means(0.25, 0.5, 0.2, 0.1), 0.05, 1e-15);
  EXPECT_DOUBLE_EQ(structural_loss_from_means(0.4, 0.4, 0.4, 0.1), 0.2);
  std::vector<double> nn_{0.5, 0.7}, ne{0.5}, ee{0.2};
  EXPECT_DOUBLE_EQ(structural_loss(nn_, ne, ee, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(structural_loss(nn_, ne, {}, 0.1), 0.0);
}

TEST(StructuralLoss, SubgradientMatchesFiniteDifferencesAwayFromKinks) {
  Rng rng(4);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> vals(7);
    for (double& v : vals) v = uniform01(rng);
    auto split = [&](std::span<const double> x) {
      return std::array<std::vector<double>, 3>{std::vector<double>(x.begin(), x.begin() + 2),
                                                std::vector<double>(x.begin() + 2, x.begin() + 4),
                                                std::vector<double>(x.begin() + 4, x.end())};
    };
    auto parts = split(vals);
    const double ee = channel_mean(parts[2]);
    if (std::abs(channel_mean(parts[0]) - ee - 0.1) < 1e-3 || std::abs(channel_mean(parts[1]) - ee - 0.1) < 1e-3) continue;
    nn::Tape t;
    std::vector<nn::Var> vars;
    for (double v : vals) vars.push_back(t.constant(v));
    std::vector<nn::Var> a(vars.begin(), vars.begin() + 2), b(vars.begin() + 2, vars.begin() + 4), c(vars.begin() + 4, vars.end());
    nn::Var loss = structural_loss(t, a, b, c, 0.1);
    EXPECT_NEAR(t.scalar(loss), structural_loss(parts[0], parts[1], parts[2], 0.1), 1e-15);
    t.backward(loss);
    for (std::size_t k = 0; k < vals.size(); ++k) {
      auto up = vals, down = vals;
      up[k] += 1e-6;
      down[k] -= 1e-6;
      auto pu = split(up), pd = split(down);
      const double fd = (structural_loss(pu[0], pu[1], pu[2], 0.1) - structural_loss(pd[0], pd[1], pd[2], 0.1)) / 2e-6;
      const double g = t.grad(vars[k])[0];
      EXPECT_LE(std::abs(fd - g), std::max(1e-7, 1e-4 * std::abs(fd))) << trial << " " << k;
    }
    ++checked;
  }
  EXPECT_GT(checked, 150);
}

TEST(TrainStep, ZeroAdvantageAndZeroGammaLeavesParams) {
  Rng rng(5);
  auto p = PolicyParams::init(tiny(), rng);
  auto pool = pool_with_nucleus(5, 2, 3, 6);
  auto r = sample_topology(p, pool, std::vector<double>{0.1, 0.2, -0.3, 0.4}, 2, rng);
  std::vector<std::vector<double>> snapshot;
  for (auto* d : p.parameters()) snapshot.push_back(d->weights);
  RewardConfig cfg;
  cfg.gamma_struct = 0.0;
  cfg.lambda_cost = 0.0;
  BaselineState b{0.5, 0.1, 10};
  std::vector<ScoredRollout> batch{{&r, 0.5, "t0"}};  // R == b -> A = 0
  train_step(batch, p, cfg, b);
  std::size_t k = 0;
  for (auto* d : p.parameters()) EXPECT_EQ(d->weights, snapshot[k++]);
}

TEST(TrainStep, StructuralTermClosesMarginGaps) {
  Rng rng(7);
  auto p = PolicyParams::init(tiny(), rng);
  auto pool = pool_with_nucleus(5, 2, 3, 8);
  RewardConfig cfg;
  cfg.gamma_struct = 1.0;
  cfg.lambda_cost = 0.0;
  cfg.learning_rate = 0.5;
  std::vector<double> x{0.3, -0.2, 0.5, 0.1};
  std::vector<AgentId> electrons{2, 3, 4};
  RolloutOptions opt;
  opt.forced_electrons = electrons;
  auto loss_now = [&] {
    Rng r(11);
    auto ro = sample_topology(p, pool, x, 3, r, opt);
    return ro.tape->scalar(structural_loss(*ro.tape, ro.rho_nn, ro.rho_ne, ro.rho_ee, cfg.margin));
  };
  double prev = loss_now();
  ASSERT_GT(prev, 0.0);
  for (int step = 0; step < 30 && prev > 0; ++step) {
    Rng r(11);
    auto ro = sample_topology(p, pool, x, 3, r, opt);
    BaselineState b{0.0, 0.0, 0};
    std::vector<ScoredRollout> batch{{&ro, 0.0, "s"}};  // R = b = 0 -> A = 0
    train_step(batch, p, cfg, b);
    const double now = loss_now();
    EXPECT_LE(now, prev + 1e-12);
    prev = now;
  }
  EXPECT_LT(prev, 0.2);
}

TEST(TrainStep, AdvantageCarriesNoGradient) {
  // Gradients with the advantage held at its value equal those from
  // (score * A) with A as a constant node.
  Rng rng(9);
  auto p = PolicyParams::init(tiny(), rng);
  auto pool = pool_with_nucleus(4, 1, 3, 10);
  std::vector<double> x{0.2, 0.2, -0.1, 0.0};
  RewardConfig cfg;
  cfg.learning_rate = 0.0;
  Rng r1(12);
  auto ro = sample_topology(p, pool, x, 2, r1);
  BaselineState b{0.2, 0.3, 5};
  std::vector<ScoredRollout> batch{{&ro, 0.9, "a"}};
  train_step(batch, p, cfg, b);
  std::vector<std::vector<double>> g1;
  for (auto* d : p.parameters()) g1.push_back(d->grad_weights);

  BaselineState b2{0.2, 0.3, 5};
  const double adv = b2.advance(compute_reward(0.9, ro.topology, cfg.lambda_cost), cfg.baseline_beta, cfg.advantage_eps);
  Rng r2(12);
  auto ro2 = sample_topology(p, pool, x, 2, r2);
  nn::zero_grad(p.parameters());
  nn::Tape& t = *ro2.tape;
  nn::Var score = t.add(ro2.activation_log_prob, edge_surrogate(t, ro2.spatial_log_probs, ro2.temporal_log_probs));
  nn::Var obj = t.sub(t.scale(score, adv), t.scale(structural_loss(t, ro2.rho_nn, ro2.rho_ne, ro2.rho_ee, cfg.margin), cfg.gamma_struct));
  t.backward(t.scale(obj, -1.0));
  std::size_t k = 0;
  for (auto* d : p.parameters()) {
    for (std::size_t i = 0; i < d->grad_weights.size(); ++i) EXPECT_NEAR(d->grad_weights[i], g1[k][i], 1e-12);
    ++k;
  }
}

TEST(TrainStep, NonFiniteLossAbortsWithTraceId) {
  Rng rng(13);
  auto p = PolicyParams::init(tiny(), rng);
  auto pool = pool_with_nucleus(4, 1, 3, 14);
  auto ro = sample_topology(p, pool, std::vector<double>{0, 0, 0, 0}, 1, rng);
  std::vector<ScoredRollout> batch{{&ro, std::nan(""), "bad-trace-7"}};
  BaselineState b;
  try {
    train_step(batch, p, RewardConfig{}, b);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("bad-trace-7"), std::string::npos);
  }
}

TEST(RewardConfig, Validation) {
  RewardConfig c;
  EXPECT_NO_THROW(c.validate());
  c.margin = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RewardConfig{};
  c.baseline_beta = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RewardConfig{};
  c.lambda_cost = std::nan("");
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
