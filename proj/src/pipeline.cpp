#include "cartvis/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cartvis/error.hpp"
#include "cartvis/eval.hpp"

namespace cartvis {

namespace fs = std::filesystem;

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / ".lock") {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create run directory " + run_dir.string() + ": " + ec.message());
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw Error(ErrorKind::Locked, "run directory is locked by another process (remove " + path_.string() +
                                       " if it is stale)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

void prepare(const RunConfig& config, const RunLayout& run, const fs::path& stage_dir) {
  std::error_code ec;
  fs::create_directories(stage_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + stage_dir.string() + ": " + ec.message());
  if (!fs::exists(run.config())) config.save(run.config());
  config.save(stage_dir / "config");
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::vector<EpochLoss> read_loss_csv(const fs::path& path) {
  std::vector<EpochLoss> out;
  for (const auto& r : read_csv(path)) {
    if (r.size() < 3) throw Error(ErrorKind::Corrupt, "malformed loss csv: " + path.string());
    out.push_back({std::stoi(r[0]), std::stod(r[1]), std::stod(r[2])});
  }
  return out;
}

void write_loss_csv(const fs::path& path, const std::vector<EpochLoss>& rows) {
  std::ofstream out(path, std::ios::trunc);
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : rows) out << e.epoch << ',' << num(e.train) << ',' << num(e.val) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<EpisodeLog> read_episode_csv(const fs::path& path) {
  std::vector<EpisodeLog> out;
  for (const auto& r : read_csv(path)) {
    if (r.size() < 5) throw Error(ErrorKind::Corrupt, "malformed episode csv: " + path.string());
    out.push_back({std::stoll(r[0]), std::stoi(r[1]), std::stod(r[2]), std::stod(r[3]), std::stod(r[4])});
  }
  return out;
}

}  // namespace

void cmd_collect(const RunConfig& config, const RunLayout& run) {
  config.validate();
  RunLock lock(run.root);
  prepare(config, run, run.dataset());
  const CollectResult r = collect(run.dataset(), config.dataset, config.env);
  std::cerr << "collected " << r.samples << " samples from " << r.episodes << " episodes into "
            << run.dataset().string() << '\n';
}

void cmd_train_predictor(const RunConfig& config, const RunLayout& run, bool resume) {
  config.validate();
  const fs::path data_path = run.dataset() / "dataset.bin";
  if (!fs::exists(data_path))
    throw Error(ErrorKind::MissingArtifact, "missing dataset " + data_path.string() + " (run `collect` first)");
  RunLock lock(run.root);
  prepare(config, run, run.predictor());

  const DatasetReader data(data_path);
  const Manifest manifest = read_manifest(run.dataset() / "manifest.txt");
  const Split sp = split(data.size(), std::stod(manifest.at("split_ratio")), std::stoull(manifest.at("split_seed")));
  PredictorTrainer trainer(data, sp, config.predictor, config.predictor_arch);

  const fs::path last = run.predictor() / "last.ckpt";
  const fs::path best = run.predictor() / "best.ckpt";
  const fs::path csv = run.predictor() / "loss.csv";
  std::vector<EpochLoss> curve;
  if (resume) {
    TrainerState state = load_trainer_state(last, config.predictor);
    if (!(state.model.arch() == config.predictor_arch))
      throw Error(ErrorKind::Dimension, "resume checkpoint architecture differs from the config");
    if (fs::exists(csv))
      for (const auto& e : read_loss_csv(csv))
        if (e.epoch <= state.epoch) curve.push_back(e);
    trainer.resume(std::move(state));
  }

  while (trainer.state().epoch < config.predictor.epochs) {
    const EpochLoss e = trainer.run_epoch();
    curve.push_back(e);
    write_loss_csv(csv, curve);
    if (trainer.improved()) save_predictor(trainer.state().model, best);
    save_trainer_state(trainer.state(), last);
    std::cerr << "epoch " << e.epoch << "/" << config.predictor.epochs << "  train " << num(e.train) << "  val "
              << num(e.val) << '\n';
  }
  if (curve.empty()) write_loss_csv(csv, curve);
}

void cmd_train_rl(const RunConfig& config, const RunLayout& run, ObservationMode mode,
                  const std::optional<fs::path>& predictor) {
  config.validate();
  std::optional<PredictorModel<float>> model;
  if (mode == ObservationMode::Predicted) {
    const fs::path path = predictor.value_or(run.predictor() / "best.ckpt");
    if (!fs::exists(path))
      throw Error(ErrorKind::MissingArtifact,
                  "predicted observations need a predictor checkpoint; missing " + path.string());
    model = load_predictor<float>(path, &config.predictor_arch);
  }
  RunLock lock(run.root);
  const fs::path dir = run.rl(mode);
  prepare(config, run, dir);

  DqnHooks hooks;
  hooks.on_episode = [](const EpisodeLog& e) {
    if (e.episode % 50 == 0) std::cerr << "episode " << e.episode << "  steps " << e.steps << '\n';
  };
  const DqnResult r = train_dqn(mode, config.rl, config.env, model ? &*model : nullptr, hooks);
  save_qnetwork(r.online, mode, dir / "agent.ckpt");
  std::ofstream out(dir / "episodes.csv", std::ios::trunc);
  out << "episode,steps,shaped_return,raw_return,epsilon\n";
  for (const auto& e : r.episodes)
    out << e.episode << ',' << e.steps << ',' << num(e.shaped_return) << ',' << num(e.raw_return) << ','
        << num(e.epsilon) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for episodes.csv");
  std::cerr << "trained " << to_string(mode) << "-state agent over " << r.episodes.size() << " episodes\n";
}

void cmd_eval(const RunConfig& config, const RunLayout& run, std::vector<AgentSpec> agents,
              const std::optional<fs::path>& predictor) {
  config.validate();
  if (agents.empty()) {
    for (ObservationMode m : {ObservationMode::Full, ObservationMode::Predicted})
      if (fs::exists(run.rl(m) / "agent.ckpt")) agents.push_back({run.rl(m) / "agent.ckpt", m});
  }
  const fs::path predictor_path = predictor.value_or(run.predictor() / "best.ckpt");
  bool need_predictor = agents.empty();
  for (const auto& a : agents) need_predictor = need_predictor || a.mode == ObservationMode::Predicted;

  std::vector<std::string> missing;
  for (const auto& a : agents)
    if (!fs::exists(a.path)) missing.push_back("agent checkpoint " + a.path.string());
  if (need_predictor && !fs::exists(predictor_path)) missing.push_back("predictor checkpoint " + predictor_path.string());
  if (!missing.empty()) {
    std::string msg = "cannot evaluate, missing:";
    for (const auto& m : missing) msg += " [" + m + "]";
    throw Error(ErrorKind::MissingArtifact, msg);
  }

  RunLock lock(run.root);
  prepare(config, run, run.eval());
  std::optional<PredictorModel<float>> model;
  if (fs::exists(predictor_path)) model = load_predictor<float>(predictor_path, &config.predictor_arch);

  const Bounds bounds = config.bounds();
  ReportInputs in;
  if (model) {
    StateVec total = StateVec::Zero();
    for (int i = 0; i < config.eval.seeds; ++i) {
      const Trajectory tr = random_rollout(*model, config.env, config.eval.seed_base + i, config.eval.max_steps);
      total += rmse_percent(tr, bounds);
      if (i == 0) in.traces.emplace_back("predictor_random_actions", tr);
    }
    in.predictor_rmse = total / config.eval.seeds;
  }
  for (const auto& spec : agents) {
    ObservationMode stored;
    const QNet policy = load_qnetwork(spec.path, &stored);
    AgentSummary s;
    s.label = spec.mode == ObservationMode::Full ? "full_state_rl" : "pred_state_rl";
    StateVec rmse = StateVec::Zero();
    for (int i = 0; i < config.eval.seeds; ++i) {
      const Trajectory tr = rollout(policy, spec.mode, config.env, config.eval.seed_base + i,
                                    model ? &*model : nullptr, config.eval.max_steps);
      s.mae += mae_percent(tr, bounds);
      s.mean_length += double(tr.size());
      if (tr.has_estimates()) rmse += rmse_percent(tr, bounds);
      if (i == 0) in.traces.emplace_back(s.label, tr);
    }
    s.mae /= config.eval.seeds;
    s.mean_length /= config.eval.seeds;
    if (spec.mode == ObservationMode::Predicted) s.rmse = rmse / config.eval.seeds;
    in.agents.push_back(s);
    const fs::path episodes = spec.path.parent_path() / "episodes.csv";
    if (fs::exists(episodes)) in.reward_curves.emplace_back(s.label, read_episode_csv(episodes));
  }
  if (fs::exists(run.predictor() / "loss.csv")) in.predictor_curve = read_loss_csv(run.predictor() / "loss.csv");
  write_report(run.eval(), in);
  std::ifstream report(run.eval() / "report.txt");
  std::cout << report.rdbuf();
}

}  // namespace cartvis
