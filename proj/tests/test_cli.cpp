#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cartvis/config.hpp"
#include "scratch.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status;
  std::string err;
};

Outcome cli(const fs::path& scratch, const std::string& args) {
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = std::string(CARTVIS_CLI) + " " + args + " > " + (scratch / "stdout.txt").string() + " 2> " +
                          err.string();
  const int raw = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

/// Small enough that the whole pipeline runs in seconds.
fs::path write_smoke_config(const fs::path& dir) {
  cartvis::RunConfig c;
  c.dataset.samples = 400;
  c.predictor_arch.conv1_channels = 4;
  c.predictor_arch.conv2_channels = 4;
  c.predictor_arch.feature_width = 16;
  c.predictor_arch.hidden_width = 8;
  c.predictor_arch.head_hidden = 8;
  c.predictor.epochs = 2;
  c.rl.hidden_width = 16;
  c.rl.learning_starts = 200;
  c.rl.target_update_period = 100;
  c.rl.total_timesteps = 2000;
  c.eval.seeds = 2;
  c.eval.max_steps = 60;
  const fs::path p = dir / "smoke.conf";
  c.save(p);
  return p;
}

void run_pipeline(const fs::path& scratch, const fs::path& conf, const fs::path& run) {
  const std::string common = " --config " + conf.string() + " --run " + run.string();
  REQUIRE(cli(scratch, "collect --n 150" + common).status == 0);
  REQUIRE(cli(scratch, "train-predictor --epochs 2" + common).status == 0);
  REQUIRE(cli(scratch, "train-rl --obs full --timesteps 2000" + common).status == 0);
  REQUIRE(cli(scratch, "train-rl --obs predicted --timesteps 600" + common).status == 0);
  REQUIRE(cli(scratch, "eval --seeds 3" + common).status == 0);
}

}  // namespace

TEST_CASE("init-config writes a parseable default config") {
  test::ScratchDir dir("cli_init");
  REQUIRE(cli(dir.path, "init-config " + (dir.path / "d.conf").string()).status == 0);
  CHECK(cartvis::RunConfig::load(dir.path / "d.conf").serialize() == cartvis::RunConfig{}.serialize());
}

TEST_CASE("smoke pipeline honours overrides and emits every artifact") {
  test::ScratchDir dir("cli_smoke");
  const fs::path conf = write_smoke_config(dir.path);
  const fs::path run = dir.path / "run";
  run_pipeline(dir.path, conf, run);

  CHECK(slurp(run / "dataset" / "manifest.txt").find("sample_count = 150\n") != std::string::npos);
  const auto loss = lines(run / "predictor" / "loss.csv");
  REQUIRE(loss.size() == 3);
  CHECK(loss[0] == "epoch,train_loss,val_loss");
  CHECK(loss[1].rfind("1,", 0) == 0);
  CHECK(loss[2].rfind("2,", 0) == 0);
  for (const char* f : {"best.ckpt", "last.ckpt"}) CHECK(fs::exists(run / "predictor" / f));
  for (const char* d : {"rl_full", "rl_pred"}) {
    CHECK(fs::exists(run / d / "agent.ckpt"));
    CHECK(lines(run / d / "episodes.csv").size() > 1);
  }
  const auto mae = lines(run / "eval" / "metrics_mae.csv");
  REQUIRE(mae.size() == 3);
  CHECK(mae[1].rfind("full_state_rl,", 0) == 0);
  CHECK(mae[2].rfind("pred_state_rl,", 0) == 0);
  CHECK(fs::exists(run / "eval" / "metrics_rmse.csv"));
  CHECK(slurp(dir.path / "stdout.txt") == slurp(run / "eval" / "report.txt"));
  const std::string used = slurp(run / "config");
  CHECK(used == slurp(run / "dataset" / "config"));
  CHECK(cartvis::RunConfig::parse(used).dataset.samples == 150);
  CHECK(cartvis::RunConfig::load(run / "eval" / "config").eval.seeds == 3);
  CHECK(cartvis::RunConfig::load(run / "rl_pred" / "config").rl.total_timesteps == 600);

  SUBCASE("resume continues epoch numbering") {
    const std::string common = " --config " + conf.string() + " --run " + run.string();
    REQUIRE(cli(dir.path, "train-predictor --epochs 4 --resume" + common).status == 0);
    const auto resumed = lines(run / "predictor" / "loss.csv");
    REQUIRE(resumed.size() == 5);
    CHECK(resumed[1] == loss[1]);
    CHECK(resumed[2] == loss[2]);
    CHECK(resumed[3].rfind("3,", 0) == 0);
    CHECK(resumed[4].rfind("4,", 0) == 0);
  }
}

TEST_CASE("relative run ids live under the output root") {
  test::ScratchDir dir("cli_root");
  cartvis::RunConfig c;
  c.output_root = (dir.path / "store").string();
  c.save(dir.path / "root.conf");
  REQUIRE(cli(dir.path, "collect --n 5 --config " + (dir.path / "root.conf").string() + " --run r1").status == 0);
  CHECK(fs::exists(dir.path / "store" / "r1" / "dataset" / "dataset.bin"));
  CHECK(fs::exists(dir.path / "store" / "r1" / "config"));
}

TEST_CASE("eval without agents reports the predictor alone") {
  test::ScratchDir dir("cli_predictor_only");
  const fs::path conf = write_smoke_config(dir.path);
  const fs::path run = dir.path / "run";
  const std::string common = " --config " + conf.string() + " --run " + run.string();
  REQUIRE(cli(dir.path, "collect --n 60" + common).status == 0);
  REQUIRE(cli(dir.path, "train-predictor --epochs 1" + common).status == 0);
  REQUIRE(cli(dir.path, "eval --seeds 2" + common).status == 0);
  const auto rmse = lines(run / "eval" / "metrics_rmse.csv");
  REQUIRE(rmse.size() == 2);
  CHECK(rmse[1].rfind("predictor,", 0) == 0);
  CHECK_FALSE(fs::exists(run / "eval" / "metrics_mae.csv"));
  CHECK(fs::exists(run / "eval" / "trace_predictor_random_actions_theta.svg"));
}

TEST_CASE("every subcommand rewrites byte-identical CSVs") {
  test::ScratchDir dir("cli_determinism");
  const fs::path conf = write_smoke_config(dir.path);
  run_pipeline(dir.path, conf, dir.path / "a");
  run_pipeline(dir.path, conf, dir.path / "b");
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path / "a")) {
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".txt" && ext != ".svg" && ext != ".ckpt" && ext != ".bin") continue;
    const fs::path twin = dir.path / "b" / fs::relative(e.path(), dir.path / "a");
    INFO(e.path().string());
    CHECK(slurp(e.path()) == slurp(twin));
    ++compared;
  }
  CHECK(compared >= 15);
}

TEST_CASE("missing artifacts and usage errors are reported") {
  test::ScratchDir dir("cli_errors");
  const fs::path conf = write_smoke_config(dir.path);
  const std::string common = " --config " + conf.string() + " --run " + (dir.path / "run").string();

  Outcome o = cli(dir.path, "train-rl --obs predicted" + common);
  CHECK(o.status == 1);
  CHECK(o.err.find("missing_artifact") != std::string::npos);
  CHECK(o.err.find("best.ckpt") != std::string::npos);

  o = cli(dir.path, "train-predictor" + common);
  CHECK(o.status == 1);
  CHECK(o.err.find("dataset.bin") != std::string::npos);

  o = cli(dir.path, "eval" + common);
  CHECK(o.status == 1);
  CHECK(o.err.find("missing_artifact") != std::string::npos);

  o = cli(dir.path, "collect --n 10 --config " + (dir.path / "absent.conf").string() + " --run x");
  CHECK(o.status == 1);

  o = cli(dir.path, "train-rl --obs sideways" + common);
  CHECK(o.status != 0);

  fs::create_directories(dir.path / "run");
  std::ofstream(dir.path / "run" / ".lock") << "";
  o = cli(dir.path, "collect --n 10" + common);
  CHECK(o.status == 1);
  CHECK(o.err.find(".lock") != std::string::npos);
}
