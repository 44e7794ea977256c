#pragma once

// Experiment commands: offline condensation, predictor fitting, online
// training, evaluation (with budget sweeps) and trace replay. Every command
// writes into <out_dir>/<command>/ and finishes with a manifest that hashes
// each file it wrote.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "orbit/budget.hpp"
#include "orbit/chat_backend.hpp"
#include "orbit/checkpoint.hpp"
#include "orbit/config.hpp"
#include "orbit/execution.hpp"
#include "orbit/graph.hpp"
#include "orbit/partition.hpp"
#include "orbit/policy.hpp"
#include "orbit/stats.hpp"
#include "orbit/supernet.hpp"
#include "orbit/trace.hpp"
#include "orbit/trainer.hpp"

#ifndef ORBIT_VERSION
#define ORBIT_VERSION "0.1.0"
#endif

namespace orbit {

// Raised for failures after the configuration was accepted: missing or
// mismatched artifacts, backend or numeric aborts.
struct RuntimeAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

// --- hashing and manifest --------------------------------------------------

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw RuntimeAbort("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw RuntimeAbort("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg, fs::path dir)
      : command_(std::move(command)), dir_(std::move(dir)), started_(utc_timestamp()) {
    config_hash_ = sha256_hex(to_json(cfg).dump());
  }

  void input(const std::string& role, const fs::path& p) { inputs_.emplace_back(role, p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  fs::path write() const {
    nlohmann::ordered_json m;
    m["command"] = command_;
    m["version"] = ORBIT_VERSION;
    m["config_hash"] = "sha256:" + config_hash_;
    m["started_at"] = started_;
    m["finished_at"] = utc_timestamp();
    nlohmann::ordered_json in = nlohmann::ordered_json::object();
    for (const auto& [role, p] : inputs_) in[role] = p.string();
    m["artifacts_in"] = in;
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (const auto& p : outputs_) {
      if (!fs::exists(p)) throw RuntimeAbort("manifest: output file missing: " + p.string());
      files.push_back({{"path", fs::relative(p, dir_).generic_string()},
                       {"sha256", sha256_file(p)},
                       {"bytes", fs::file_size(p)}});
    }
    m["files"] = files;
    const fs::path path = dir_ / "manifest.json";
    std::ofstream out(path);
    out << m.dump(2) << '\n';
    if (!out) throw RuntimeAbort("cannot write " + path.string());
    return path;
  }

 private:
  std::string command_;
  fs::path dir_;
  std::string started_;
  std::string config_hash_;
  std::vector<std::pair<std::string, fs::path>> inputs_;
  std::vector<fs::path> outputs_;
};

// --- small utilities --------------------------------------------------------

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written by index so output order never depends on scheduling.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw RuntimeAbort("cannot write " + p.string());
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline SuiteConfig suite_with_count(SuiteConfig s, int count) {
  s.count = count;
  return s;
}

inline std::unique_ptr<AgentBackend> make_backend(const RunConfig& cfg, const RolePool& pool) {
  if (cfg.backend == "chat") return std::make_unique<ChatBackend>(EndpointConfig::from_env(), &pool);
  return std::make_unique<MockBackend>();
}

struct CommandOptions {
  std::ostream* log = nullptr;
};

inline void note(const CommandOptions& o, const std::string& msg) {
  if (o.log) *o.log << msg << '\n';
}

// --- offline ---------------------------------------------------------------

struct NucleusArtifact {
  int domain = 0;
  std::vector<AgentId> ids;
  std::vector<double> saliency;
  std::vector<AgentId> nucleus_ids;
  std::string logits_checkpoint;  // relative to the artifact's directory
};

inline nlohmann::ordered_json to_json(const NucleusArtifact& a) {
  nlohmann::ordered_json j;
  j["domain"] = a.domain;
  j["saliency"] = a.saliency;
  j["nucleus_ids"] = a.nucleus_ids;
  j["logits_checkpoint"] = a.logits_checkpoint;
  j["agent_ids"] = a.ids;
  return j;
}

inline NucleusArtifact load_nucleus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeAbort("missing nucleus artifact " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw RuntimeAbort("nucleus artifact is not JSON: " + path.string());
  try {
    NucleusArtifact a;
    a.domain = j.at("domain");
    a.saliency = j.at("saliency").get<std::vector<double>>();
    a.nucleus_ids = j.at("nucleus_ids").get<std::vector<AgentId>>();
    a.logits_checkpoint = j.at("logits_checkpoint");
    a.ids = j.at("agent_ids").get<std::vector<AgentId>>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeAbort("malformed nucleus artifact " + path.string() + ": " + e.what());
  }
}

struct OfflineReport {
  NucleusArtifact nucleus;
  SupernetParams supernet;
  int episodes_run = 0;
  double final_baseline = 0.0;
  fs::path nucleus_path;
  fs::path manifest_path;
};

inline OfflineReport cmd_offline(const RunConfig& cfg, const CommandOptions& opt = {}) {
  validate_run_config(cfg);
  const fs::path dir = cfg.out_dir / "offline";
  fs::create_directories(dir);
  Manifest manifest("offline", cfg, dir);
  RolePool pool = build_pool(cfg.pool);
  const auto& oc = cfg.offline.core;

  OfflineReport rep;
  rep.supernet = SupernetParams::zeros(pool.ids(), oc.sparsity_weight);
  OfflineBaseline baseline;
  OfflineUpdateOptions upd{true, oc.learning_rate, oc.baseline_beta};
  std::optional<SuiteCoverage> coverage;
  if (cfg.offline.utility == "suite_coverage")
    coverage.emplace(generate_task_suite(cfg.environment, split_seed(cfg.seed, "suite-offline")), pool);
  for (int ep = 0; ep < oc.episodes; ++ep) {
    Rng rng = make_rng(cfg.seed, "offline-episode", static_cast<std::uint64_t>(ep));
    auto sample = sample_supernet_topology(rep.supernet, rng, oc.rounds);
    const double u = coverage ? (*coverage)(sample.topology)
                              : (sample.topology.spatial_edges.count(*cfg.offline.bandit_edge) ? 1.0 : 0.0);
    try {
      offline_update(rep.supernet, u, sample, baseline, upd);
    } catch (const std::runtime_error& e) {
      throw RuntimeAbort(std::string("offline episode ") + std::to_string(ep) + ": " + e.what());
    }
    ++rep.episodes_run;
  }
  rep.final_baseline = baseline.mean;

  auto& art = rep.nucleus;
  art.domain = cfg.offline.domain;
  art.ids = rep.supernet.ids;
  art.saliency = node_saliency(rep.supernet);
  art.nucleus_ids = condense_nucleus(art.saliency, art.ids, oc.nucleus_size);
  art.logits_checkpoint = "supernet";

  CheckpointInfo info;
  info.seed = cfg.seed;
  info.step = rep.episodes_run;
  info.extra["agent_ids"] = art.ids;
  auto [ck_json, ck_bin] = save_checkpoint(dir / "supernet", rep.supernet.registry(), info);
  rep.nucleus_path = dir / "nucleus.json";
  write_text(rep.nucleus_path, to_json(art).dump(2) + "\n");
  std::ostringstream sal;
  sal << "agent_id,role,saliency,nucleus\n";
  for (std::size_t i = 0; i < art.ids.size(); ++i) {
    const bool nuc = std::count(art.nucleus_ids.begin(), art.nucleus_ids.end(), art.ids[i]) > 0;
    sal << art.ids[i] << ',' << pool.agent(art.ids[i]).role << ',' << fmt(art.saliency[i]) << ',' << (nuc ? 1 : 0) << '\n';
  }
  write_text(dir / "saliency.csv", sal.str());
  for (const auto& p : {rep.nucleus_path, ck_json, ck_bin, dir / "saliency.csv"}) manifest.output(p);
  rep.manifest_path = manifest.write();
  std::ostringstream msg;
  msg << "offline: " << rep.episodes_run << " episodes, nucleus";
  for (AgentId id : art.nucleus_ids) msg << ' ' << id;
  note(opt, msg.str());
  return rep;
}

// --- predictor ---------------------------------------------------------------

struct PredictorReport {
  PredictorFitReport fit;
  fs::path predictor_prefix;
  fs::path manifest_path;
};

inline std::vector<TrainingSample> to_samples(const std::vector<SyntheticTask>& tasks) {
  std::vector<TrainingSample> out;
  for (const auto& t : tasks) out.push_back({t.query_text, t.domain_id, t.difficulty});
  return out;
}

inline PredictorReport cmd_fit_predictor(const RunConfig& cfg, const CommandOptions& opt = {}) {
  validate_run_config(cfg);
  const fs::path dir = cfg.out_dir / "predictor";
  fs::create_directories(dir);
  Manifest manifest("fit-predictor", cfg, dir);
  auto train = generate_task_suite(suite_with_count(cfg.environment, cfg.budget.train_tasks), split_seed(cfg.seed, "suite-predictor-train"));
  auto held = generate_task_suite(suite_with_count(cfg.environment, std::max(cfg.budget.heldout_tasks, 1)),
                                  split_seed(cfg.seed, "suite-predictor-heldout"));
  if (cfg.budget.heldout_tasks == 0) held.clear();
  Rng init = make_rng(cfg.seed, "predictor-init");
  ComplexityPredictor pred(cfg.budget.predictor, init);
  Rng fit_rng = make_rng(cfg.seed, "predictor-fit");
  PredictorReport rep;
  try {
    rep.fit = pred.fit(to_samples(train), to_samples(held), cfg.budget.epochs, cfg.budget.learning_rate, fit_rng);
  } catch (const PcaError& e) {
    throw RuntimeAbort(std::string("fit-predictor: ") + e.what());
  }
  rep.predictor_prefix = dir / "predictor";
  auto [pj, pb] = pred.save(rep.predictor_prefix, cfg.seed);
  nlohmann::ordered_json r;
  r["train_mse"] = rep.fit.train_mse;
  r["heldout_mse"] = rep.fit.heldout_mse;
  r["heldout_spearman"] = rep.fit.heldout_spearman;
  r["pca_rank_deficient"] = rep.fit.pca_rank_deficient;
  r["train_tasks"] = train.size();
  r["heldout_tasks"] = held.size();
  write_text(dir / "fit_report.json", r.dump(2) + "\n");
  for (const auto& p : {pj, pb, dir / "fit_report.json"}) manifest.output(p);
  rep.manifest_path = manifest.write();
  if (rep.fit.pca_rank_deficient) note(opt, "fit-predictor: warning: PCA input was rank deficient; padded with zero directions");
  note(opt, "fit-predictor: held-out MSE " + fmt(rep.fit.heldout_mse) + ", Spearman " + fmt(rep.fit.heldout_spearman));
  return rep;
}

// --- shared online context ---------------------------------------------------

struct OnlineContext {
  RolePool pool;
  ComplexityPredictor predictor;
  PolicyParams policy;
  int k_max = 0;  // clamped to the electron count
  fs::path nucleus_path;
  fs::path predictor_prefix;
};

inline PolicyConfig policy_config(const RunConfig& cfg, const ComplexityPredictor& pred) {
  PolicyConfig pc;
  pc.feature_dim = pred.composite_dim();
  pc.embed_dim = cfg.pool.embedding_dim;
  pc.hidden_dim = cfg.policy.hidden_dim;
  pc.proj_dim = cfg.policy.proj_dim;
  pc.mlp_hidden = cfg.policy.mlp_hidden;
  return pc;
}

inline OnlineContext load_online_context(const RunConfig& cfg, const CommandOptions& opt) {
  OnlineContext ctx;
  ctx.pool = build_pool(cfg.pool);
  ctx.nucleus_path = cfg.out_dir / "offline" / "nucleus.json";
  auto nuc = load_nucleus(ctx.nucleus_path);
  for (AgentId id : nuc.nucleus_ids)
    if (!ctx.pool.contains(id)) throw RuntimeAbort("nucleus artifact names agent " + std::to_string(id) + " absent from the pool");
  ctx.pool.set_partition(nuc.nucleus_ids);
  ctx.predictor_prefix = cfg.out_dir / "predictor" / "predictor";
  if (!fs::exists(ctx.predictor_prefix.string() + ".json"))
    throw RuntimeAbort("missing predictor artifact " + ctx.predictor_prefix.string() + ".json");
  try {
    ctx.predictor = ComplexityPredictor::load(ctx.predictor_prefix);
  } catch (const CheckpointError& e) {
    throw RuntimeAbort(std::string("predictor artifact: ") + e.what());
  }
  const int electrons = static_cast<int>(ctx.pool.electron_ids().size());
  ctx.k_max = std::min(cfg.budget.k_max, electrons);
  if (ctx.k_max < cfg.budget.k_max)
    note(opt, "warning: budget.k_max " + std::to_string(cfg.budget.k_max) + " exceeds the electron pool; using " +
                  std::to_string(ctx.k_max));
  Rng init = make_rng(cfg.seed, "policy-init");
  ctx.policy = PolicyParams::init(policy_config(cfg, ctx.predictor), init);
  return ctx;
}

inline void save_policy(PolicyParams& p, const fs::path& prefix, std::uint64_t seed, long step) {
  CheckpointInfo info;
  info.seed = seed;
  info.step = step;
  info.extra["schema"] = "orbit-policy/1";
  info.extra["feature_dim"] = p.config.feature_dim;
  info.extra["embed_dim"] = p.config.embed_dim;
  info.extra["hidden_dim"] = p.config.hidden_dim;
  info.extra["proj_dim"] = p.config.proj_dim;
  info.extra["mlp_hidden"] = p.config.mlp_hidden;
  save_checkpoint(prefix, p.registry(), info);
}

inline void load_policy(PolicyParams& p, const fs::path& prefix) {
  if (!fs::exists(prefix.string() + ".json")) throw RuntimeAbort("missing policy checkpoint " + prefix.string() + ".json");
  try {
    auto info = load_checkpoint(prefix, p.registry());
    if (info.extra.value("schema", "") != "orbit-policy/1") throw RuntimeAbort("policy checkpoint schema mismatch");
  } catch (const CheckpointError& e) {
    throw RuntimeAbort(std::string("policy checkpoint: ") + e.what());
  }
}

struct Episode {
  const SyntheticTask* task = nullptr;
  double complexity = 0.0;
  int budget = 0;
  PolicyRollout rollout;
  ExecutionResult exec;
  double r_task = 0.0;
  double density = 0.0;
  int active_electrons = 0;
};

// Score the query, derive the budget, sample a topology and execute it.
inline Episode run_episode(OnlineContext& ctx, const RunConfig& cfg, const SyntheticTask& task, Rng& rng,
                           AgentBackend& backend, std::optional<int> budget_override = std::nullopt) {
  Episode e;
  e.task = &task;
  const auto features = ctx.predictor.features(task.query_text);
  e.complexity = ctx.predictor.predict(features.composite, task.domain_id).complexity;
  e.budget = budget_override ? std::clamp(*budget_override, 0, static_cast<int>(ctx.pool.electron_ids().size()))
                             : budget(e.complexity, ctx.k_max);
  RolloutOptions ro;
  ro.rounds = cfg.policy.rounds;
  e.rollout = sample_topology(ctx.policy, ctx.pool, features.composite, e.budget, rng, ro);
  e.active_electrons = e.rollout.activation.active_count();
  if (e.active_electrons > e.budget) throw RuntimeAbort("budget violated in task " + task.id);
  e.exec = execute(e.rollout.topology, ctx.pool, task.query_text, backend);
  e.r_task = e.exec.failed ? 0.0 : synthetic_utility(task, e.rollout.topology, ctx.pool);
  e.exec.utility = e.r_task;
  e.density = edge_density(e.rollout.topology);
  return e;
}

inline nlohmann::ordered_json episode_json(long index, const Episode& e, double reward, bool with_messages) {
  nlohmann::ordered_json j;
  j["episode"] = index;
  j["task_id"] = e.task->id;
  j["topology"] = topology_to_json(e.rollout.topology);
  j["budget"] = e.budget;
  j["complexity"] = e.complexity;
  j["utility"] = e.r_task;
  j["reward"] = reward;
  j["ptok"] = e.exec.prompt_tokens_total;
  j["ctok"] = e.exec.completion_tokens_total;
  if (with_messages) {
    nlohmann::ordered_json ms = nlohmann::ordered_json::array();
    for (const auto& m : e.exec.messages)
      ms.push_back({{"sender_id", m.sender_id},
                    {"round", m.round},
                    {"content", m.content},
                    {"prompt_tokens", m.prompt_tokens},
                    {"completion_tokens", m.completion_tokens}});
    j["messages"] = ms;
  }
  return j;
}

inline EpisodeTraceLog episode_trace(long index, const Episode& e, const RewardConfig& rc) {
  EpisodeTraceLog log;
  log.header.episode = index;
  log.header.task_id = e.task->id;
  log.header.budget = e.budget;
  log.header.active_count = static_cast<int>(e.rollout.topology.active_ids.size());
  log.header.rounds = e.rollout.topology.rounds;
  log.header.r_task = e.r_task;
  log.header.lambda_cost = rc.lambda_cost;
  log.header.density = e.density;
  log.header.reward = compute_reward(e.r_task, e.rollout.topology, rc.lambda_cost);
  log.decisions = e.rollout.decisions;
  return log;
}

// --- train -------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "episode,reward_mean,r_task_mean,density_mean,l_struct,baseline,budget_mean,active_electrons_mean";

struct MetricsRow {
  long episode = 0;
  TrainMetrics m;
};

struct TrainReport {
  std::vector<MetricsRow> rows;
  std::vector<double> episode_rewards;  // one per episode, in order
  std::vector<double> episode_l_struct;
  long prompt_tokens_total = 0;
  fs::path policy_prefix;
  fs::path trace_path;
  fs::path manifest_path;
};

inline TrainReport cmd_train(const RunConfig& cfg, const CommandOptions& opt = {}) {
  validate_run_config(cfg);
  const fs::path dir = cfg.out_dir / "train";
  fs::create_directories(dir);
  Manifest manifest("train", cfg, dir);
  OnlineContext ctx = load_online_context(cfg, opt);
  manifest.input("nucleus", ctx.nucleus_path);
  manifest.input("predictor", ctx.predictor_prefix.string() + ".json");
  const auto suite = generate_task_suite(cfg.environment, split_seed(cfg.seed, "suite-online"));

  TrainReport rep;
  rep.trace_path = dir / "trace.jsonl";
  std::ofstream metrics(dir / "metrics.csv"), episodes(dir / "episodes.jsonl"), trace(rep.trace_path);
  if (!metrics || !episodes || !trace) throw RuntimeAbort("cannot open train outputs in " + dir.string());
  metrics << kMetricsHeader << '\n';

  std::vector<std::unique_ptr<AgentBackend>> backends;
  for (int w = 0; w < cfg.workers; ++w) backends.push_back(make_backend(cfg, ctx.pool));
  BaselineState baseline;
  const int total = cfg.train.episodes, bs = cfg.train.batch_size;
  for (int start = 0; start < total; start += bs) {
    const int n = std::min(bs, total - start);
    std::vector<Episode> batch(static_cast<std::size_t>(n));
    // Rollouts only read the policy; one backend per worker slot.
    parallel_for(batch.size(), cfg.workers, [&](std::size_t i) {
      const auto ep = static_cast<std::uint64_t>(start) + i;
      Rng rng = make_rng(cfg.seed, "train-episode", ep);
      const auto& task = suite[uniform_index(rng, suite.size())];
      batch[i] = run_episode(ctx, cfg, task, rng, *backends[i % backends.size()]);
    });
    std::vector<ScoredRollout> scored;
    for (int i = 0; i < n; ++i)
      scored.push_back({&batch[static_cast<std::size_t>(i)].rollout, batch[static_cast<std::size_t>(i)].r_task,
                        "episode-" + std::to_string(start + i + 1) + "/" + batch[static_cast<std::size_t>(i)].task->id});
    TrainMetrics m;
    try {
      m = train_step(scored, ctx.policy, cfg.reward, baseline);
    } catch (const NonFiniteError& e) {
      throw RuntimeAbort(std::string("train: ") + e.what());
    }
    for (int i = 0; i < n; ++i) {
      const auto& e = batch[static_cast<std::size_t>(i)];
      const long index = start + i + 1;
      episodes << episode_json(index, e, m.rewards[static_cast<std::size_t>(i)], cfg.record_messages).dump() << '\n';
      write_trace(trace, episode_trace(index, e, cfg.reward));
      rep.episode_rewards.push_back(m.rewards[static_cast<std::size_t>(i)]);
      rep.episode_l_struct.push_back(m.l_structs[static_cast<std::size_t>(i)]);
      rep.prompt_tokens_total += e.exec.prompt_tokens_total;
    }
    const long last = start + n;
    metrics << last << ',' << fmt(m.reward_mean) << ',' << fmt(m.r_task_mean) << ',' << fmt(m.density_mean) << ','
            << fmt(m.l_struct) << ',' << fmt(m.baseline) << ',' << fmt(m.budget_mean) << ','
            << fmt(m.active_electrons_mean) << '\n';
    rep.rows.push_back({last, std::move(m)});
  }
  metrics.close();
  episodes.close();
  trace.close();
  rep.policy_prefix = dir / "policy";
  save_policy(ctx.policy, rep.policy_prefix, cfg.seed, total);
  for (const auto& p : {dir / "metrics.csv", dir / "episodes.jsonl", rep.trace_path, fs::path(rep.policy_prefix.string() + ".json"),
                        fs::path(rep.policy_prefix.string() + ".bin")})
    manifest.output(p);
  rep.manifest_path = manifest.write();
  note(opt, "train: " + std::to_string(total) + " episodes");
  return rep;
}

// --- eval --------------------------------------------------------------------

struct TaskResult {
  std::string task_id;
  Tier tier = Tier::easy;
  double difficulty = 0.0;
  double complexity = 0.0;
  int budget = 0;
  int active_electrons = 0;
  double utility = 0.0;
  double density = 0.0;
  long ptok = 0;
  long ctok = 0;
};

struct TierRow {
  std::string mode;  // "adaptive" or "fixed"
  int budget = -1;   // fixed budget, -1 for adaptive
  std::string tier;  // easy / medium / hard / all
  int tasks = 0;
  double utility_mean = 0.0;
  double ptok_mean = 0.0;
  double ctok_mean = 0.0;
  double budget_mean = 0.0;
  double active_electrons_mean = 0.0;
  double density_mean = 0.0;
};

struct EvalReport {
  std::vector<TaskResult> tasks;  // main pass (adaptive unless overridden)
  std::vector<TierRow> rows;      // main pass plus every sweep budget
  double complexity_ptok_pearson = 0.0;
  fs::path manifest_path;

  const TierRow* find(const std::string& mode, int budget, const std::string& tier) const {
    for (const auto& r : rows)
      if (r.mode == mode && r.budget == budget && r.tier == tier) return &r;
    return nullptr;
  }
};

inline constexpr const char* kTierHeader =
    "mode,budget,tier,tasks,utility_mean,ptok_mean,ctok_mean,budget_mean,active_electrons_mean,density_mean";
inline constexpr const char* kTaskHeader = "task_id,tier,difficulty,complexity,budget,active_electrons,utility,density,ptok,ctok";

inline std::vector<TierRow> tier_rows(const std::vector<TaskResult>& results, const std::string& mode, int budget_value) {
  std::vector<TierRow> rows;
  for (const char* tier : {"easy", "medium", "hard", "all"}) {
    TierRow r;
    r.mode = mode;
    r.budget = budget_value;
    r.tier = tier;
    for (const auto& t : results) {
      if (std::string(tier) != "all" && to_string(t.tier) != std::string(tier)) continue;
      ++r.tasks;
      r.utility_mean += t.utility;
      r.ptok_mean += static_cast<double>(t.ptok);
      r.ctok_mean += static_cast<double>(t.ctok);
      r.budget_mean += t.budget;
      r.active_electrons_mean += t.active_electrons;
      r.density_mean += t.density;
    }
    if (r.tasks > 0)
      for (double* v : {&r.utility_mean, &r.ptok_mean, &r.ctok_mean, &r.budget_mean, &r.active_electrons_mean, &r.density_mean})
        *v /= r.tasks;
    rows.push_back(r);
  }
  return rows;
}

struct EvalOptions {
  std::optional<int> budget_override;
  bool sweep = true;
};

inline EvalReport cmd_eval(const RunConfig& cfg, const EvalOptions& eo = {}, const CommandOptions& opt = {}) {
  validate_run_config(cfg);
  const fs::path dir = cfg.out_dir / "eval";
  fs::create_directories(dir);
  Manifest manifest("eval", cfg, dir);
  OnlineContext ctx = load_online_context(cfg, opt);
  const fs::path policy_prefix = cfg.out_dir / "train" / "policy";
  load_policy(ctx.policy, policy_prefix);
  manifest.input("nucleus", ctx.nucleus_path);
  manifest.input("predictor", ctx.predictor_prefix.string() + ".json");
  manifest.input("policy", policy_prefix.string() + ".json");
  const auto suite = generate_task_suite(suite_with_count(cfg.environment, cfg.eval.tasks), split_seed(cfg.seed, "suite-eval"));

  std::vector<std::unique_ptr<AgentBackend>> backends;
  for (int w = 0; w < cfg.workers; ++w) backends.push_back(make_backend(cfg, ctx.pool));
  // Common random numbers: task i uses the same stream under every budget.
  auto run_pass = [&](std::optional<int> k) {
    std::vector<TaskResult> out(suite.size());
    parallel_for(suite.size(), cfg.workers, [&](std::size_t i) {
      Rng rng = make_rng(cfg.seed, "eval-episode", i);
      auto e = run_episode(ctx, cfg, suite[i], rng, *backends[i % backends.size()], k);
      out[i] = {suite[i].id, suite[i].tier,     suite[i].difficulty,     e.complexity, e.budget, e.active_electrons,
                e.r_task,    e.density,         e.exec.prompt_tokens_total, e.exec.completion_tokens_total};
    });
    return out;
  };

  EvalReport rep;
  rep.tasks = run_pass(eo.budget_override);
  const std::string main_mode = eo.budget_override ? "fixed" : "adaptive";
  const int main_budget = eo.budget_override ? *eo.budget_override : -1;
  rep.rows = tier_rows(rep.tasks, main_mode, main_budget);
  std::vector<double> c, p;
  for (const auto& t : rep.tasks) c.push_back(t.complexity), p.push_back(static_cast<double>(t.ptok));
  rep.complexity_ptok_pearson = c.size() >= 2 ? stats::pearson(c, p) : 0.0;
  if (!std::isfinite(rep.complexity_ptok_pearson)) rep.complexity_ptok_pearson = 0.0;
  if (eo.sweep)
    for (int k : cfg.eval.sweep) {
      if (eo.budget_override && k == *eo.budget_override) continue;
      auto rows = tier_rows(run_pass(k), "fixed", k);
      rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
    }

  std::ostringstream tiers, tasks;
  tiers << kTierHeader << '\n';
  for (const auto& r : rep.rows)
    tiers << r.mode << ',' << r.budget << ',' << r.tier << ',' << r.tasks << ',' << fmt(r.utility_mean) << ','
          << fmt(r.ptok_mean) << ',' << fmt(r.ctok_mean) << ',' << fmt(r.budget_mean) << ','
          << fmt(r.active_electrons_mean) << ',' << fmt(r.density_mean) << '\n';
  tasks << kTaskHeader << '\n';
  for (const auto& t : rep.tasks)
    tasks << t.task_id << ',' << to_string(t.tier) << ',' << fmt(t.difficulty) << ',' << fmt(t.complexity) << ','
          << t.budget << ',' << t.active_electrons << ',' << fmt(t.utility) << ',' << fmt(t.density) << ',' << t.ptok
          << ',' << t.ctok << '\n';
  write_text(dir / "tiers.csv", tiers.str());
  write_text(dir / "tasks.csv", tasks.str());
  nlohmann::ordered_json r;
  r["mode"] = main_mode;
  if (eo.budget_override) r["budget_override"] = *eo.budget_override;
  r["tasks"] = rep.tasks.size();
  r["complexity_ptok_pearson"] = rep.complexity_ptok_pearson;
  nlohmann::ordered_json tiers_json = nlohmann::ordered_json::array();
  for (const auto& row : rep.rows)
    if (row.mode == main_mode && row.budget == main_budget)
      tiers_json.push_back({{"tier", row.tier},
                            {"tasks", row.tasks},
                            {"utility_mean", row.utility_mean},
                            {"ptok_mean", row.ptok_mean},
                            {"ctok_mean", row.ctok_mean},
                            {"budget_mean", row.budget_mean}});
  r["tiers"] = tiers_json;
  write_text(dir / "report.json", r.dump(2) + "\n");
  for (const auto& f : {dir / "tiers.csv", dir / "tasks.csv", dir / "report.json"}) manifest.output(f);
  rep.manifest_path = manifest.write();
  note(opt, "eval: " + std::to_string(rep.tasks.size()) + " tasks, Pearson(C, ptok) = " + fmt(rep.complexity_ptok_pearson));
  return rep;
}

// --- replay ------------------------------------------------------------------

inline constexpr double kReplayTolerance = 1e-9;

struct ReplayMismatch {
  long episode = 0;
  long record = -1;  // decision index within the episode, -1 for the header
  std::string field;
  double logged = 0.0;
  double recomputed = 0.0;
};

struct ReplayReport {
  long episodes = 0;
  long records = 0;
  std::vector<ReplayMismatch> mismatches;
};

inline nlohmann::ordered_json to_json(const ReplayReport& r) {
  nlohmann::ordered_json j;
  j["episodes"] = r.episodes;
  j["records"] = r.records;
  j["tolerance"] = kReplayTolerance;
  j["mismatch_count"] = r.mismatches.size();
  nlohmann::ordered_json ms = nlohmann::ordered_json::array();
  for (const auto& m : r.mismatches)
    ms.push_back({{"episode", m.episode}, {"record", m.record}, {"field", m.field}, {"logged", m.logged}, {"recomputed", m.recomputed}});
  j["mismatches"] = ms;
  return j;
}

// Recomputes every conditional probability from the logged logits (the
// activation chain through a fresh partition table) and the reward terms
// from the logged outcomes.
inline ReplayReport replay_traces(const std::vector<EpisodeTraceLog>& logs) {
  ReplayReport rep;
  auto check = [&](long ep, long rec, const std::string& field, double logged, double recomputed) {
    if (!(std::abs(logged - recomputed) <= kReplayTolerance)) rep.mismatches.push_back({ep, rec, field, logged, recomputed});
  };
  for (const auto& log : logs) {
    ++rep.episodes;
    const long ep = log.header.episode;
    std::vector<double> logits;
    std::vector<std::size_t> act_index;
    long edges = 0;
    for (std::size_t i = 0; i < log.decisions.size(); ++i) {
      const auto& d = log.decisions[i];
      ++rep.records;
      if (d.kind == DecisionKind::activate) {
        logits.push_back(d.logit);
        act_index.push_back(i);
      } else {
        const double p = nn::sigmoid(clamp_logit(d.logit));
        check(ep, static_cast<long>(i), std::string(to_string(d.kind)) + ".probability", d.probability, d.accepted ? p : 1.0 - p);
        edges += d.accepted ? 1 : 0;
      }
    }
    if (!logits.empty()) {
      auto table = PartitionTable::build(logits, log.header.budget);
      int rem = table.budget();
      int taken = 0;
      for (std::size_t k = 0; k < logits.size(); ++k) {
        const auto& d = log.decisions[act_index[k]];
        const double p = table.accept_probability(k, rem);
        check(ep, static_cast<long>(act_index[k]), "activate.probability", d.probability, d.accepted ? p : 1.0 - p);
        if (d.accepted) {
          --rem;
          ++taken;
        }
      }
      if (taken > log.header.budget) check(ep, -1, "activate.count", taken, log.header.budget);
    }
    const double n = log.header.active_count;
    const double density = n > 1 ? static_cast<double>(edges) / (2.0 * n * (n - 1.0)) : 0.0;
    check(ep, -1, "density", log.header.density, density);
    check(ep, -1, "reward", log.header.reward, log.header.r_task - log.header.lambda_cost * density);
  }
  return rep;
}

inline ReplayReport cmd_replay(const RunConfig& cfg, const fs::path& trace_path, const CommandOptions& opt = {}) {
  std::ifstream in(trace_path);
  if (!in) throw RuntimeAbort("cannot read trace " + trace_path.string());
  std::vector<EpisodeTraceLog> logs;
  try {
    logs = read_traces(in);
  } catch (const TraceFormatError& e) {
    throw RuntimeAbort(std::string("corrupt trace: ") + e.what());
  }
  ReplayReport rep = replay_traces(logs);
  const fs::path dir = cfg.out_dir / "replay";
  fs::create_directories(dir);
  Manifest manifest("replay", cfg, dir);
  manifest.input("trace", trace_path);
  write_text(dir / "replay_report.json", to_json(rep).dump(2) + "\n");
  manifest.output(dir / "replay_report.json");
  manifest.write();
  note(opt, "replay: " + std::to_string(rep.episodes) + " episodes, " + std::to_string(rep.records) + " records, " +
                std::to_string(rep.mismatches.size()) + " mismatches");
  for (const auto& m : rep.mismatches)
    note(opt, "  episode " + std::to_string(m.episode) + " record " + std::to_string(m.record) + " " + m.field +
                  ": logged " + fmt(m.logged) + " recomputed " + fmt(m.recomputed));
  return rep;
}

}  // namespace orbit
