#include <doctest.h>

#include "cartvis/config.hpp"
#include "cartvis/error.hpp"
#include "scratch.hpp"

using namespace cartvis;

namespace {

ErrorKind kind_of(std::string_view text) {
  try {
    RunConfig::parse(text);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("parse accepted " << text);
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("config round-trips parse, serialize, parse losslessly") {
  RunConfig c;
  c.env.time_step = 0.01;
  c.dataset.samples = 1234;
  c.dataset.binned_resets = false;
  c.predictor_arch.hidden_width = 3;
  c.predictor_arch.invert_input = false;
  c.predictor.learning_rate = 3.3e-4;
  c.rl.seed = 18446744073709551615ull;
  c.rl.shaping.position = 0.1 + 0.2;
  c.eval.seeds = 7;
  c.output_root = "elsewhere";

  const std::string text = c.serialize();
  const RunConfig back = RunConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.env.time_step == c.env.time_step);
  CHECK(back.dataset.samples == 1234);
  CHECK_FALSE(back.dataset.binned_resets);
  CHECK(back.predictor_arch.hidden_width == 3);
  CHECK_FALSE(back.predictor_arch.invert_input);
  CHECK(back.predictor.learning_rate == c.predictor.learning_rate);
  CHECK(back.rl.seed == c.rl.seed);
  CHECK(back.rl.shaping.position == c.rl.shaping.position);
  CHECK(back.eval.seeds == 7);
  CHECK(back.output_root == "elsewhere");
}

TEST_CASE("absent keys keep their defaults") {
  const RunConfig c = RunConfig::parse("# only one override\n[rl]\ntotal_timesteps = 50000\n");
  CHECK(c.rl.total_timesteps == 50000);
  CHECK(c.serialize().find("total_timesteps = 50000") != std::string::npos);
  RunConfig d;
  d.rl.total_timesteps = 50000;
  CHECK(c.serialize() == d.serialize());
}

TEST_CASE("malformed configs are rejected") {
  CHECK(kind_of("[rl]\nlearning_rat = 1e-4\n") == ErrorKind::Config);
  CHECK(kind_of("[reinforcement]\nseed = 1\n") == ErrorKind::Config);
  CHECK(kind_of("seed = 1\n") == ErrorKind::Config);
  CHECK(kind_of("[rl]\nseed = four\n") == ErrorKind::Config);
  CHECK(kind_of("[rl]\nseed\n") == ErrorKind::Config);
  CHECK(kind_of("[dataset]\nbinned_resets = maybe\n") == ErrorKind::Config);
}

TEST_CASE("config validation rejects out-of-range values") {
  RunConfig c;
  c.rl.gamma = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.dataset.split_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = RunConfig{};
  c.predictor.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(RunConfig{}.validate());
}

TEST_CASE("config save and load through a file") {
  test::ScratchDir dir("config_file");
  RunConfig c;
  c.dataset.seed = 99;
  c.save(dir.path / "run.conf");
  CHECK(RunConfig::load(dir.path / "run.conf").serialize() == c.serialize());
  try {
    RunConfig::load(dir.path / "absent.conf");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingArtifact);
  }
}

TEST_CASE("checked-in default config matches the built-in defaults") {
  const auto path = std::filesystem::path(CARTVIS_SOURCE_DIR) / "configs" / "default.conf";
  CHECK(RunConfig::load(path).serialize() == RunConfig{}.serialize());
}
