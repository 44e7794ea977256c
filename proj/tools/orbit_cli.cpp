// Command-line entry point. Exit codes: 0 success, 2 configuration error,
// 3 runtime abort.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "orbit/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeAbort = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> backend;
  std::optional<int> episodes;
  std::optional<int> workers;
};

void add_common(CLI::App* sub, CommonFlags& f, const std::string& episodes_help) {
  sub->add_option("--config", f.config, "Run configuration JSON (defaults apply when omitted)");
  sub->add_option("--seed", f.seed, "Override the run seed");
  sub->add_option("--out", f.out, "Override the output directory");
  sub->add_option("--backend", f.backend, "Agent backend")->check(CLI::IsMember({"mock", "chat"}));
  sub->add_option("--episodes", f.episodes, episodes_help)->check(CLI::NonNegativeNumber);
  sub->add_option("--workers", f.workers, "Parallel rollout workers")->check(CLI::PositiveNumber);
}

orbit::RunConfig resolve(const CommonFlags& f, const std::string& command) {
  orbit::RunConfig cfg = f.config.empty() ? orbit::default_run_config() : orbit::load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out_dir = *f.out;
  if (f.backend) cfg.backend = *f.backend;
  if (f.workers) cfg.workers = *f.workers;
  if (f.episodes) {
    if (command == "offline") cfg.offline.core.episodes = *f.episodes;
    else if (command == "train") cfg.train.episodes = *f.episodes;
    else if (command == "eval") cfg.eval.tasks = *f.episodes;
  }
  orbit::validate_run_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbit: budgeted multi-agent topology learning"};
  app.require_subcommand(1);
  CommonFlags f;
  auto* offline = app.add_subcommand("offline", "Train the supernet and condense the nucleus");
  auto* fit = app.add_subcommand("fit-predictor", "Fit the query complexity predictor");
  auto* train = app.add_subcommand("train", "Train the electron policy online");
  auto* eval = app.add_subcommand("eval", "Evaluate the trained policy per tier and budget");
  auto* replay = app.add_subcommand("replay", "Recompute logged decision probabilities from a trace");
  add_common(offline, f, "Offline episodes");
  add_common(fit, f, "Unused");
  add_common(train, f, "Training episodes");
  add_common(eval, f, "Evaluation tasks");
  add_common(replay, f, "Unused");
  std::optional<int> budget_override;
  bool no_sweep = false;
  eval->add_option("--budget-override", budget_override, "Use this fixed budget instead of the predictor")
      ->check(CLI::NonNegativeNumber);
  eval->add_flag("--no-sweep", no_sweep, "Skip the fixed-budget sweep");
  std::string trace_path;
  replay->add_option("trace", trace_path, "Trace JSONL (default <out>/train/trace.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  orbit::CommandOptions opt{&std::cerr};
  try {
    const std::string name = app.get_subcommands().front()->get_name();
    const orbit::RunConfig cfg = resolve(f, name);
    if (name == "offline") orbit::cmd_offline(cfg, opt);
    else if (name == "fit-predictor") orbit::cmd_fit_predictor(cfg, opt);
    else if (name == "train") orbit::cmd_train(cfg, opt);
    else if (name == "eval") orbit::cmd_eval(cfg, {budget_override, !no_sweep}, opt);
    else {
      const auto path = trace_path.empty() ? cfg.out_dir / "train" / "trace.jsonl" : std::filesystem::path(trace_path);
      if (!orbit::cmd_replay(cfg, path, opt).mismatches.empty()) return kRuntimeAbort;
    }
    return kOk;
  } catch (const orbit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return kRuntimeAbort;
  }
}
