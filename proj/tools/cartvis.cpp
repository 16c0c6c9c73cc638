#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cartvis/config.hpp"
#include "cartvis/error.hpp"
#include "cartvis/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cartvis;

namespace {

struct Common {
  std::string config;
  std::string run;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file (defaults are used when omitted)");
  cmd->add_option("--run", c.run, "run id: a directory under output.root (absolute paths are used as given)")->required();
}

RunConfig load_config(const Common& c) {
  if (c.config.empty()) return RunConfig{};
  return RunConfig::load(c.config);
}

ObservationMode parse_mode(const std::string& s) { return observation_mode_from(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cart-pole control from rendered frames"};
  app.require_subcommand(1);

  Common common;

  auto* collect = app.add_subcommand("collect", "generate the frame/state dataset");
  add_common(collect, common);
  std::optional<std::size_t> n;
  collect->add_option("--n", n, "number of samples");

  auto* train_pred = app.add_subcommand("train-predictor", "train the state predictor");
  add_common(train_pred, common);
  std::optional<int> epochs;
  bool resume = false;
  train_pred->add_option("--epochs", epochs, "total epochs");
  train_pred->add_flag("--resume", resume, "continue from last.ckpt");

  auto* train_rl = app.add_subcommand("train-rl", "train a DQN agent");
  add_common(train_rl, common);
  std::string obs = "full";
  std::optional<long long> timesteps;
  std::optional<std::string> predictor;
  train_rl->add_option("--obs", obs, "full | predicted")->check(CLI::IsMember({"full", "predicted", "pred"}));
  train_rl->add_option("--timesteps", timesteps, "environment steps");
  train_rl->add_option("--predictor", predictor, "predictor checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate agents and the predictor");
  add_common(eval, common);
  std::vector<std::string> agent_paths;
  std::vector<std::string> agent_modes;
  std::optional<int> seeds;
  std::optional<std::string> eval_predictor;
  eval->add_option("--agent", agent_paths, "agent checkpoint (repeatable)");
  eval->add_option("--obs", agent_modes, "observation mode per --agent")
      ->check(CLI::IsMember({"full", "predicted", "pred"}));
  eval->add_option("--seeds", seeds, "evaluation episodes");
  eval->add_option("--predictor", eval_predictor, "predictor checkpoint");

  auto* init = app.add_subcommand("init-config", "write the default config");
  std::string init_path;
  init->add_option("path", init_path, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (init->parsed()) {
      RunConfig{}.save(init_path);
      return 0;
    }
    RunConfig config = load_config(common);
    const RunLayout run{fs::path(config.output_root) / common.run};

    if (collect->parsed()) {
      if (n) config.dataset.samples = *n;
      cmd_collect(config, run);
    } else if (train_pred->parsed()) {
      if (epochs) config.predictor.epochs = *epochs;
      cmd_train_predictor(config, run, resume);
    } else if (train_rl->parsed()) {
      if (timesteps) config.rl.total_timesteps = *timesteps;
      std::optional<fs::path> p;
      if (predictor) p = *predictor;
      cmd_train_rl(config, run, parse_mode(obs), p);
    } else if (eval->parsed()) {
      if (seeds) config.eval.seeds = *seeds;
      if (!agent_modes.empty() && agent_modes.size() != agent_paths.size())
        throw Error(ErrorKind::InvalidArgument, "--obs must be given once per --agent");
      std::vector<AgentSpec> agents;
      for (std::size_t i = 0; i < agent_paths.size(); ++i)
        agents.push_back({agent_paths[i], agent_modes.empty() ? ObservationMode::Full : parse_mode(agent_modes[i])});
      std::optional<fs::path> p;
      if (eval_predictor) p = *eval_predictor;
      cmd_eval(config, run, agents, p);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
