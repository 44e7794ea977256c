#include <gtest/gtest.h>

#include <map>

#include "orbit/budget.hpp"
#include "orbit/execution.hpp"

using namespace orbit;

namespace {

RolePool abc_pool() {
  std::vector<AgentSpec> agents{{0, "planner", "drafts a plan", {"arithmetic"}, {1.0}},
                                {1, "solver", "", {"logic", "geometry"}, {0.5}},
                                {2, "checker", "verifies", {"reading"}, {0.2}}};
  return RolePool(agents);
}

// Records every input it sees; replies with a fixed tag per agent and round.
class RecordingBackend : public AgentBackend {
 public:
  std::map<std::pair<AgentId, int>, AgentInput> seen;
  Message respond(const AgentSpec& agent, const AgentInput& in) override {
    seen[{agent.id, in.round}] = in;
    Message m;
    m.content = "msg-" + std::to_string(agent.id) + "-" + std::to_string(in.round);
    m.prompt_tokens = 10 + agent.id;
    m.completion_tokens = 3;
    return m;
  }
  const AgentInput& at(AgentId id, int round) const { return seen.at({id, round}); }
};

class FlakyBackend : public AgentBackend {
 public:
  int failures_left;
  int calls = 0;
  explicit FlakyBackend(int failures) : failures_left(failures) {}
  Message respond(const AgentSpec& agent, const AgentInput& in) override {
    ++calls;
    if (failures_left-- > 0) throw BackendError("boom", true);
    return MockBackend{}.respond(agent, in);
  }
};

bool contains_message(const std::vector<Message>& ctx, AgentId sender, int round) {
  for (const auto& m : ctx)
    if (m.sender_id == sender && m.round == round) return true;
  return false;
}

}  // namespace

TEST(Execute, SingleAgentSingleRound) {
  auto pool = abc_pool();
  CompositeTopology t{{1}, {}, {}, 1};
  MockBackend mock;
  auto r = execute(t, pool, "what is 1+1?", mock);
  ASSERT_EQ(r.messages.size(), 1u);
  EXPECT_EQ(r.final_answer, r.messages[0].content);
  EXPECT_EQ(r.final_responder, 1);
}

TEST(Execute, ChainPassesSameRoundMessages) {
  auto pool = abc_pool();
  CompositeTopology t{{0, 1}, {{0, 1}}, {}, 1};
  RecordingBackend rec;
  auto r = execute(t, pool, "q", rec);
  EXPECT_TRUE(rec.at(0, 1).spatial_context.empty());
  ASSERT_EQ(rec.at(1, 1).spatial_context.size(), 1u);
  EXPECT_EQ(rec.at(1, 1).spatial_context[0].content, "msg-0-1");
  EXPECT_EQ(r.final_answer, "msg-1-1");
}

TEST(Execute, TemporalEdgeReadsPreviousRound) {
  auto pool = abc_pool();
  CompositeTopology t{{0, 1, 2}, {{2, 1}}, {{0, 1}}, 2};
  RecordingBackend rec;
  auto r = execute(t, pool, "q", rec);
  EXPECT_TRUE(rec.at(1, 1).temporal_context.empty());
  EXPECT_TRUE(contains_message(rec.at(1, 2).temporal_context, 0, 1));
  EXPECT_TRUE(contains_message(rec.at(1, 2).spatial_context, 2, 2));
  EXPECT_EQ(r.messages.size(), 6u);
  // Topological order [0, 2, 1]: agent 1 answers last.
  EXPECT_EQ(r.final_answer, "msg-1-2");
  // Assembled text carries role, state, query and tagged context.
  const auto& text = rec.at(1, 2).assembled;
  EXPECT_NE(text.find("role: solver"), std::string::npos);
  EXPECT_NE(text.find("[planner round 1] msg-0-1"), std::string::npos);
  EXPECT_NE(text.find("[checker round 2] msg-2-2"), std::string::npos);
}

TEST(Execute, TokenConservation) {
  auto pool = abc_pool();
  CompositeTopology t{{0, 1, 2}, {{0, 1}, {1, 2}, {0, 2}}, {{2, 0}}, 3};
  MockBackend mock;
  auto r = execute(t, pool, "a question with several words", mock);
  long p = 0, c = 0;
  for (const auto& m : r.messages) p += m.prompt_tokens, c += m.completion_tokens;
  EXPECT_EQ(p, r.prompt_tokens_total);
  EXPECT_EQ(c, r.completion_tokens_total);
  EXPECT_EQ(c, 9 * MockBackend::kCompletionTokens);
}

TEST(Execute, RetryOnceThenFail) {
  auto pool = abc_pool();
  CompositeTopology t{{0, 1}, {{0, 1}}, {}, 1};
  FlakyBackend once(1);
  auto ok = execute(t, pool, "q", once);
  EXPECT_FALSE(ok.failed);
  EXPECT_EQ(once.calls, 3);
  FlakyBackend twice(2);
  auto bad = execute(t, pool, "q", twice);
  EXPECT_TRUE(bad.failed);
  EXPECT_EQ(bad.utility, 0.0);
  EXPECT_NE(bad.diagnostic.find("agent 0"), std::string::npos);
}

TEST(Execute, CyclicTopologyRejected) {
  auto pool = abc_pool();
  CompositeTopology t{{0, 1}, {{0, 1}, {1, 0}}, {}, 1};
  MockBackend mock;
  EXPECT_THROW(execute(t, pool, "q", mock), CycleError);
}

TEST(MockBackend, Examples) {
  MockBackend mock;
  AgentSpec a{3, "r", "", {}, {}};
  AgentInput in;
  in.round = 2;
  in.assembled = "a b c";
  auto m1 = mock.respond(a, in), m2 = mock.respond(a, in);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(m1.prompt_tokens, 3);
  EXPECT_EQ(m1.completion_tokens, 16);
  EXPECT_EQ(whitespace_tokens(m1.content), 16);
  in.round = 3;
  EXPECT_NE(mock.respond(a, in).content, m1.content);
}

TEST(MockBackend, MorePredecessorsMeanMorePromptTokens) {
  auto pool = abc_pool();
  MockBackend mock;
  CompositeTopology one{{0, 1, 2}, {{0, 2}}, {}, 1};
  CompositeTopology two{{0, 1, 2}, {{0, 2}, {1, 2}}, {}, 1};
  auto r1 = execute(one, pool, "q", mock), r2 = execute(two, pool, "q", mock);
  EXPECT_GT(r2.find(2, 1)->prompt_tokens, r1.find(2, 1)->prompt_tokens);
}

TEST(MockBackend, AddingSpatialEdgeNeverShrinksPrompt) {
  std::vector<AgentSpec> agents;
  for (int i = 0; i < 6; ++i) agents.push_back({i, "role" + std::to_string(i), "", {}, {0.0}});
  RolePool pool(agents);
  Rng rng(3);
  MockBackend mock;
  for (int trial = 0; trial < 200; ++trial) {
    CompositeTopology t{{0, 1, 2, 3, 4, 5}, {}, {}, 1 + static_cast<int>(uniform_index(rng, 2))};
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j)
        if (bernoulli(rng, 0.3)) t.spatial_edges.insert({i, j});
    int u = static_cast<int>(uniform_index(rng, 5));
    int v = u + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(5 - u)));
    auto base = execute(t, pool, "q", mock);
    t.spatial_edges.insert({u, v});
    auto more = execute(t, pool, "q", mock);
    for (int round = 1; round <= t.rounds; ++round)
      EXPECT_GE(more.find(v, round)->prompt_tokens, base.find(v, round)->prompt_tokens);
  }
}

TEST(MockBackend, PromptTokensGrowWithActiveAgents) {
  std::vector<AgentSpec> agents;
  for (int i = 0; i < 8; ++i) agents.push_back({i, "role" + std::to_string(i), "", {}, {0.0}});
  RolePool pool(agents);
  Rng rng(4);
  MockBackend mock;
  std::vector<double> mean(9, 0.0);
  for (int n = 1; n <= 8; ++n) {
    for (int trial = 0; trial < 125; ++trial) {
      CompositeTopology t;
      t.rounds = 2;
      for (int i = 0; i < n; ++i) t.active_ids.push_back(i);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (i < j && bernoulli(rng, 0.3)) t.spatial_edges.insert({i, j});
          if (i != j && bernoulli(rng, 0.3)) t.temporal_edges.insert({i, j});
        }
      mean[n] += static_cast<double>(execute(t, pool, "some query text", mock).prompt_tokens_total) / 125.0;
    }
    if (n > 1) {
      EXPECT_GE(mean[n], mean[n - 1]);
    }
  }
}

TEST(SyntheticUtility, Examples) {
  auto pool = abc_pool();
  SyntheticTask task;
  task.required_skills = {"arithmetic", "logic"};
  CompositeTopology chain{{0, 1}, {{0, 1}}, {}, 1};
  EXPECT_DOUBLE_EQ(synthetic_utility(task, chain, pool), 1.0);
  CompositeTopology isolated{{0, 1, 2}, {{0, 1}}, {}, 1};
  // Responder is 2 (last in order), unreachable from 0 and 1; coverage 1.
  EXPECT_DOUBLE_EQ(synthetic_utility(task, isolated, pool), 0.5);
  SyntheticTask none;
  none.required_skills = {"finance"};
  EXPECT_DOUBLE_EQ(synthetic_utility(none, chain, pool), 0.0);
  EXPECT_DOUBLE_EQ(reachable_coverage(task, isolated, pool), 0.0);
  EXPECT_DOUBLE_EQ(reachable_coverage(task, chain, pool), 1.0);
}

TEST(SuiteCoverage, HandExample) {
  auto pool = abc_pool();
  SyntheticTask t1, t2;
  t1.required_skills = {"arithmetic", "logic"};
  t2.required_skills = {"reading"};
  CompositeTopology topo{{0, 1, 2}, {{0, 1}}, {}, 1};
  EXPECT_DOUBLE_EQ(reachable_coverage(t1, topo, pool, 1), 1.0);
  EXPECT_DOUBLE_EQ(reachable_coverage(t1, topo, pool, 0), 0.5);
  // Responder 0: (0.5 + 0) / 2, responder 1: (1 + 0) / 2, responder 2: (0 + 1) / 2.
  EXPECT_NEAR(SuiteCoverage({t1, t2}, pool)(topo), 1.25 / 3.0, 1e-15);
}

TEST(SuiteCoverage, MatchesBruteForceAverage) {
  std::vector<AgentSpec> agents;
  const std::vector<std::string> skills{"arithmetic", "reading", "logic", "geometry", "probability", "coding"};
  for (int i = 0; i < 6; ++i) agents.push_back({i, "r" + std::to_string(i), "", {skills[i]}, {1.0}});
  RolePool pool(agents);
  SuiteConfig cfg;
  cfg.count = 50;
  const auto tasks = generate_task_suite(cfg, 4);
  SuiteCoverage fast(tasks, pool);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    CompositeTopology topo;
    topo.active_ids = {0, 1, 2, 3, 4, 5};
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j)
        if (uniform01(rng) < 0.3) topo.spatial_edges.insert({i, j});
    double brute = 0.0;
    for (AgentId r : topo.active_ids)
      for (const auto& t : tasks) brute += reachable_coverage(t, topo, pool, r);
    brute /= static_cast<double>(tasks.size() * topo.active_ids.size());
    EXPECT_NEAR(fast(topo), brute, 1e-12);
  }
}

TEST(TaskSuite, DeterministicAndLabelled) {
  SuiteConfig cfg;
  auto a = generate_task_suite(cfg, 11), b = generate_task_suite(cfg, 11);
  ASSERT_EQ(a.size(), 300u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].query_text, b[i].query_text);
    EXPECT_EQ(a[i].required_skills, b[i].required_skills);
    EXPECT_FALSE(a[i].required_skills.empty());
    if (a[i].tier == Tier::easy) {
      EXPECT_LE(a[i].difficulty, 2.0 / 6.0);
    }
    if (a[i].tier == Tier::hard) {
      EXPECT_GE(a[i].difficulty, 5.0 / 6.0);
    }
  }
  EXPECT_NE(generate_task_suite(cfg, 12)[0].query_text + generate_task_suite(cfg, 12)[1].query_text,
            a[0].query_text + a[1].query_text);
}

TEST(TaskSuite, HardQueriesCarryMoreSymbols) {
  auto suite = generate_task_suite(SuiteConfig{}, 5);
  double easy = 0, hard = 0;
  int ne = 0, nh = 0;
  for (const auto& t : suite) {
    const auto f = extract_structural_features(t.query_text);
    const double symbols = f.counts[kNumericLiterals] + f.counts[kArithmeticOps] + f.counts[kRelationalOps] + f.counts[kVariables];
    if (t.tier == Tier::easy) easy += symbols, ++ne;
    if (t.tier == Tier::hard) hard += symbols, ++nh;
  }
  ASSERT_GT(ne, 0);
  ASSERT_GT(nh, 0);
  EXPECT_GT(hard / nh, easy / ne);
}
