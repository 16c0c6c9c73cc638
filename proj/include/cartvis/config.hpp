#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cartvis/dataset.hpp"
#include "cartvis/env.hpp"
#include "cartvis/predictor.hpp"
#include "cartvis/eval.hpp"
#include "cartvis/rl.hpp"

namespace cartvis {

struct EvalConfig {
  int seeds = 10;
  std::uint64_t seed_base = 1000;
  int max_steps = 500;
};

/// Every knob of a run. Serialized as sectioned `key = value` text; parsing
/// rejects unknown sections and keys, absent keys keep their defaults.
struct RunConfig {
  EnvParams env;
  CollectConfig dataset;
  PredictorArch predictor_arch;
  TrainConfig predictor;
  RLConfig rl;
  EvalConfig eval;
  /// Parent of relative run ids given on the command line.
  std::string output_root = "runs";

  Bounds bounds() const;
  void validate() const;

  std::string serialize() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace cartvis
