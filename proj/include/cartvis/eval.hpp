#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cartvis/env.hpp"
#include "cartvis/predictor.hpp"
#include "cartvis/rl.hpp"

namespace cartvis {

/// Per-dimension normalization constants for percentage metrics.
struct Bounds {
  StateVec scale{2.4, 3.0, 0.21, 3.0};

  static Bounds from(const EnvParams& env, double velocity_cap, double angular_velocity_cap) {
    return {StateVec(env.position_bound, velocity_cap, env.angle_bound, angular_velocity_cap)};
  }
  void validate() const;
};

enum class Termination { Terminated, Truncated };

struct Trajectory {
  std::vector<State> truth;          // state at which actions[k] was chosen
  std::vector<StateVec> estimates;   // empty unless the observation was predicted
  std::vector<Action> actions;
  std::vector<double> rewards;       // raw survival reward
  Termination cause = Termination::Truncated;

  std::size_t size() const { return truth.size(); }
  bool has_estimates() const { return !estimates.empty(); }
};

/// Greedy rollout of `policy`. Predicted mode requires `predictor`.
Trajectory rollout(const QNet& policy, ObservationMode mode, const EnvParams& env, std::uint64_t seed,
                   const PredictorModel<float>* predictor = nullptr, int max_steps = 500);

/// Uniform random actions with predictor estimates recorded alongside.
Trajectory random_rollout(const PredictorModel<float>& predictor, const EnvParams& env, std::uint64_t seed,
                          int max_steps = 500);

/// sqrt(mean_k (s_k - s^_k)^2) / bound * 100, per dimension.
StateVec rmse_percent(const Eigen::Ref<const Eigen::Matrix<double, 4, Eigen::Dynamic>>& truth,
                      const Eigen::Ref<const Eigen::Matrix<double, 4, Eigen::Dynamic>>& estimates,
                      const Bounds& bounds);
StateVec rmse_percent(const Trajectory& traj, const Bounds& bounds);

/// mean_k |s_k - 0| / bound * 100, per dimension.
StateVec mae_percent(const Trajectory& traj, const Bounds& bounds);

// Reports --------------------------------------------------------------------

struct AgentSummary {
  std::string label;
  StateVec mae = StateVec::Zero();
  double mean_length = 0.0;
  std::optional<StateVec> rmse;  // predicted-observation agents only
};

struct ReportInputs {
  std::vector<AgentSummary> agents;
  std::optional<StateVec> predictor_rmse;
  std::vector<EpochLoss> predictor_curve;
  std::vector<std::pair<std::string, std::vector<EpisodeLog>>> reward_curves;
  std::vector<std::pair<std::string, Trajectory>> traces;
};

/// Writes metrics_rmse.csv, metrics_mae.csv, report.txt and SVG plots into
/// `dir`. Throws MissingArtifact naming what is absent when there is nothing
/// to tabulate.
void write_report(const std::filesystem::path& dir, const ReportInputs& inputs);

/// Line chart of several series sharing an x axis.
struct PlotSeries {
  std::string label;
  std::vector<double> y;
  std::string color;
};
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                          const std::vector<PlotSeries>& series);

}  // namespace cartvis
