#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cartvis/config.hpp"

namespace cartvis {

/// runs/<id>/{config, dataset/, predictor/, rl_full/, rl_pred/, eval/}
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config"; }
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path predictor() const { return root / "predictor"; }
  std::filesystem::path rl(ObservationMode mode) const {
    return root / (mode == ObservationMode::Full ? "rl_full" : "rl_pred");
  }
  std::filesystem::path eval() const { return root / "eval"; }
};

/// Exclusive lock file held for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

void cmd_collect(const RunConfig& config, const RunLayout& run);

/// Writes best.ckpt, last.ckpt (with optimizer state) and loss.csv. With
/// `resume`, continues from last.ckpt and appends to loss.csv.
void cmd_train_predictor(const RunConfig& config, const RunLayout& run, bool resume = false);

/// Writes agent.ckpt and episodes.csv under rl_full/ or rl_pred/.
void cmd_train_rl(const RunConfig& config, const RunLayout& run, ObservationMode mode,
                  const std::optional<std::filesystem::path>& predictor = std::nullopt);

struct AgentSpec {
  std::filesystem::path path;
  ObservationMode mode = ObservationMode::Full;
};

/// With no agents given, evaluates whichever agents exist in the run and
/// falls back to predictor-only evaluation on random-action episodes.
void cmd_eval(const RunConfig& config, const RunLayout& run, std::vector<AgentSpec> agents,
              const std::optional<std::filesystem::path>& predictor = std::nullopt);

}  // namespace cartvis
