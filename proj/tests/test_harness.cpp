#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "orbit/harness.hpp"

using namespace orbit;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& name) {
  RunConfig c = default_run_config();
  c.seed = 5;
  c.out_dir = fs::temp_directory_path() / ("orbit_harness_" + name);
  fs::remove_all(c.out_dir);
  c.offline.core.episodes = 40;
  c.budget.train_tasks = 60;
  c.budget.heldout_tasks = 20;
  c.budget.epochs = 3;
  c.train.episodes = 12;
  c.eval.tasks = 15;
  c.eval.sweep = {0, 2};
  c.environment.count = 40;
  return c;
}

void run_pipeline(const RunConfig& c) {
  cmd_offline(c);
  cmd_fit_predictor(c);
  cmd_train(c);
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(Manifest, Sha256MatchesKnownDigests) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, ListsEveryFileWithItsHash) {
  const RunConfig c = tiny_config("manifest");
  const auto rep = cmd_offline(c);
  const auto m = nlohmann::json::parse(read_file(rep.manifest_path));
  EXPECT_EQ(m["command"], "offline");
  EXPECT_EQ(m["config_hash"], "sha256:" + sha256_hex(to_json(c).dump()));
  std::set<std::string> listed;
  for (const auto& f : m["files"]) {
    const fs::path p = c.out_dir / "offline" / f["path"].get<std::string>();
    EXPECT_EQ(f["sha256"], sha256_hex(read_file(p)));
    EXPECT_EQ(f["bytes"], fs::file_size(p));
    listed.insert(f["path"].get<std::string>());
  }
  for (const auto& entry : fs::directory_iterator(c.out_dir / "offline")) {
    if (entry.path().filename() == "manifest.json") continue;
    EXPECT_TRUE(listed.count(entry.path().filename().string())) << entry.path();
  }
}

TEST(Offline, NucleusArtifactShape) {
  const RunConfig c = tiny_config("nucleus");
  const auto rep = cmd_offline(c);
  const auto j = nlohmann::ordered_json::parse(read_file(rep.nucleus_path));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"domain", "saliency", "nucleus_ids", "logits_checkpoint", "agent_ids"}));
  EXPECT_EQ(j["nucleus_ids"].size(), 3u);
  EXPECT_EQ(j["saliency"].size(), 8u);
  // The logits checkpoint reproduces the saliency exactly.
  auto sn = SupernetParams::zeros(j["agent_ids"].get<std::vector<AgentId>>());
  auto reg = sn.registry();
  load_checkpoint(c.out_dir / "offline" / j["logits_checkpoint"].get<std::string>(), reg);
  EXPECT_EQ(node_saliency(sn), j["saliency"].get<std::vector<double>>());
}

TEST(Offline, BanditUtilityRewardsTheTargetEdge) {
  RunConfig c = tiny_config("bandit");
  c.offline.utility = "bandit";
  c.offline.bandit_edge = Edge{1, 4};
  c.offline.core.episodes = 600;
  c.offline.core.sparsity_weight = 0.0;
  const auto rep = cmd_offline(c);
  EXPECT_GT(nn::sigmoid(rep.supernet.s(1, 4)), 0.8);
}

TEST(Pipeline, MissingArtifactsAbort) {
  const RunConfig c = tiny_config("missing");
  EXPECT_THROW(cmd_train(c), RuntimeAbort);
  cmd_offline(c);
  EXPECT_THROW(cmd_train(c), RuntimeAbort);
  cmd_fit_predictor(c);
  EXPECT_THROW(cmd_eval(c), RuntimeAbort);
}

TEST(Pipeline, TrainOutputsHaveTheDocumentedShape) {
  const RunConfig c = tiny_config("train");
  run_pipeline(c);
  const auto metrics = lines_of(c.out_dir / "train" / "metrics.csv");
  ASSERT_EQ(metrics.size(), 13u);
  EXPECT_EQ(metrics[0], "episode,reward_mean,r_task_mean,density_mean,l_struct,baseline,budget_mean,active_electrons_mean");
  EXPECT_EQ(metrics[1].substr(0, 2), "1,");
  const auto episodes = lines_of(c.out_dir / "train" / "episodes.jsonl");
  ASSERT_EQ(episodes.size(), 12u);
  const auto e = nlohmann::ordered_json::parse(episodes[0]);
  std::vector<std::string> keys;
  for (auto it = e.begin(); it != e.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"episode", "task_id", "topology", "budget", "complexity", "utility", "reward", "ptok", "ctok"}));
  std::vector<std::string> topo_keys;
  for (auto it = e["topology"].begin(); it != e["topology"].end(); ++it) topo_keys.push_back(it.key());
  EXPECT_EQ(topo_keys, (std::vector<std::string>{"active", "spatial", "temporal", "rounds"}));
  for (const auto& line : episodes) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["budget"], budget(j["complexity"].get<double>(), c.budget.k_max));
  }
}

TEST(Pipeline, MessagesAreRecordedOnlyWhenEnabled) {
  RunConfig c = tiny_config("messages");
  c.record_messages = true;
  c.train.episodes = 3;
  run_pipeline(c);
  const auto j = nlohmann::json::parse(lines_of(c.out_dir / "train" / "episodes.jsonl")[0]);
  ASSERT_TRUE(j.contains("messages"));
  long ptok = 0;
  for (const auto& m : j["messages"]) ptok += m["prompt_tokens"].get<long>();
  EXPECT_EQ(ptok, j["ptok"].get<long>());
}

TEST(Pipeline, WorkerCountDoesNotChangeResults) {
  RunConfig a = tiny_config("workers1");
  a.train.batch_size = 4;
  RunConfig b = a;
  b.out_dir = fs::temp_directory_path() / "orbit_harness_workers3";
  fs::remove_all(b.out_dir);
  b.workers = 3;
  run_pipeline(a);
  run_pipeline(b);
  EXPECT_EQ(read_file(a.out_dir / "train" / "metrics.csv"), read_file(b.out_dir / "train" / "metrics.csv"));
  EXPECT_EQ(read_file(a.out_dir / "train" / "policy.bin"), read_file(b.out_dir / "train" / "policy.bin"));
  cmd_eval(a);
  cmd_eval(b);
  EXPECT_EQ(read_file(a.out_dir / "eval" / "tasks.csv"), read_file(b.out_dir / "eval" / "tasks.csv"));
}

TEST(Pipeline, EvalHonoursBudgetsAndSweeps) {
  const RunConfig c = tiny_config("eval");
  run_pipeline(c);
  const auto rep = cmd_eval(c);
  ASSERT_NE(rep.find("adaptive", -1, "all"), nullptr);
  for (int k : {0, 2}) {
    const auto* row = rep.find("fixed", k, "all");
    ASSERT_NE(row, nullptr);
    EXPECT_EQ(row->budget_mean, k);
    EXPECT_LE(row->active_electrons_mean, k);
  }
  const auto fixed = cmd_eval(c, {1, false});
  for (const auto& t : fixed.tasks) {
    EXPECT_EQ(t.budget, 1);
    EXPECT_LE(t.active_electrons, 1);
  }
  EXPECT_EQ(lines_of(c.out_dir / "eval" / "tiers.csv")[0],
            "mode,budget,tier,tasks,utility_mean,ptok_mean,ctok_mean,budget_mean,active_electrons_mean,density_mean");
}

TEST(Pipeline, KMaxIsClampedToTheElectronPool) {
  RunConfig c = tiny_config("clamp");
  c.budget.k_max = 9;
  run_pipeline(c);
  for (const auto& line : lines_of(c.out_dir / "train" / "episodes.jsonl"))
    EXPECT_LE(nlohmann::json::parse(line)["budget"].get<int>(), 5);
}

TEST(Replay, CleanTraceHasNoMismatches) {
  const RunConfig c = tiny_config("replay");
  run_pipeline(c);
  const auto rep = cmd_replay(c, c.out_dir / "train" / "trace.jsonl");
  EXPECT_EQ(rep.episodes, 12);
  EXPECT_GT(rep.records, 12);
  EXPECT_TRUE(rep.mismatches.empty());
}

TEST(Replay, TamperedProbabilityAndRewardAreReported) {
  const RunConfig c = tiny_config("tamper");
  run_pipeline(c);
  std::ifstream in(c.out_dir / "train" / "trace.jsonl");
  auto logs = read_traces(in);
  ASSERT_FALSE(logs.empty());
  logs[0].decisions[0].probability += 1e-6;
  logs[1].header.reward += 0.01;
  const auto rep = replay_traces(logs);
  ASSERT_EQ(rep.mismatches.size(), 2u);
  EXPECT_EQ(rep.mismatches[0].episode, 1);
  EXPECT_EQ(rep.mismatches[0].field, "activate.probability");
  EXPECT_EQ(rep.mismatches[1].episode, 2);
  EXPECT_EQ(rep.mismatches[1].field, "reward");
}

TEST(Replay, HandBuiltTrace) {
  // Two electrons with logits 0 and ln 3, budget 1. Z = 1 + 1 + 3 = 5, so
  // P(first active) = 1/5; given it is not, P(second) = 3/4.
  EpisodeTraceLog log;
  log.header = {1, "t", 1, 3, 2, 1.0, 0.2, 0.0, 0.0};
  log.decisions.push_back({DecisionKind::activate, {3}, 0.0, 0.8, false});
  log.decisions.push_back({DecisionKind::activate, {4}, std::log(3.0), 0.75, true});
  log.decisions.push_back({DecisionKind::spatial, {0, 4}, 0.0, 0.5, true});
  log.decisions.push_back({DecisionKind::temporal, {4, 0}, std::log(3.0), 0.25, false});
  // One edge over 2 * 3 * 2 slots.
  log.header.density = 1.0 / 12.0;
  log.header.reward = 1.0 - 0.2 / 12.0;
  const auto rep = replay_traces({log});
  EXPECT_EQ(rep.records, 4);
  for (const auto& m : rep.mismatches) ADD_FAILURE() << m.field << " " << m.logged << " vs " << m.recomputed;
}

TEST(Replay, CorruptTraceAborts) {
  const RunConfig c = tiny_config("corrupt");
  fs::create_directories(c.out_dir);
  write_text(c.out_dir / "bad.jsonl", "{\"kind\":\"episode\"\n");
  EXPECT_THROW(cmd_replay(c, c.out_dir / "bad.jsonl"), RuntimeAbort);
}
