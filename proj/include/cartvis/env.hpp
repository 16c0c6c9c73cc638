#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace cartvis {

class BinTable;

using StateVec = Eigen::Matrix<double, 4, 1>;

/// Cart-pole state [x, x_dot, theta, theta_dot]; theta > 0 leans the pole right.
struct State {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;

  StateVec vec() const { return {x, x_dot, theta, theta_dot}; }
  static State from(const StateVec& v) { return {v(0), v(1), v(2), v(3)}; }
  bool finite() const;
  State operator-() const { return {-x, -x_dot, -theta, -theta_dot}; }
  bool operator==(const State&) const = default;
};

enum class Action : std::uint8_t { Left = 0, Right = 1 };

inline Action mirror(Action a) { return a == Action::Left ? Action::Right : Action::Left; }
inline int to_int(Action a) { return static_cast<int>(a); }
Action action_from_int(int value);

struct EnvParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double force_magnitude = 10.0;
  double time_step = 0.02;
  double position_bound = 2.4;
  double angle_bound = 0.21;
  int max_steps = 500;

  void validate() const;
  bool operator==(const EnvParams&) const = default;
};

struct StepResult {
  State next_state;
  double reward = 1.0;
  bool terminated = false;
  bool truncated = false;
};

bool out_of_bounds(const EnvParams& params, const State& s);

/// One explicit-Euler step of the frictionless cart-pole ODE. Does not track
/// truncation; see CartPole for episode bookkeeping.
StepResult step(const EnvParams& params, const State& state, Action action);

/// Episode wrapper around `step`: step counter, truncation and reset policies.
class CartPole {
 public:
  explicit CartPole(EnvParams params = {});

  /// Uniform reset in [-0.05, 0.05]^4.
  State reset(std::uint64_t seed);
  /// Uniform reset inside one cell of `bins`.
  State reset(std::uint64_t seed, const BinTable& bins, std::size_t bin);

  StepResult step(Action action);

  const State& state() const { return state_; }
  int step_count() const { return steps_; }
  bool done() const { return done_; }
  const EnvParams& params() const { return params_; }

 private:
  EnvParams params_;
  State state_;
  int steps_ = 0;
  bool done_ = false;
};

// Rendering ------------------------------------------------------------------

/// 8-bit interleaved (HWC) RGB raster.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int h, int w, int c = 3) : height(h), width(w), channels(c), data(std::size_t(h) * w * c, 0) {}

  std::uint8_t& at(int y, int x, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

struct RenderGeometry {
  static constexpr int kSize = 128;
  static constexpr double kCartWidth = 20.0;
  static constexpr double kCartHeight = 10.0;
  static constexpr int kCartTop = 88;
  static constexpr double kPoleLength = 40.0;
  static constexpr double kPoleWidth = 3.0;
  /// Pixels per metre; x = +/-position_bound puts the cart flush with the border.
  static double scale(const EnvParams& params) { return (kSize / 2.0 - kCartWidth / 2.0) / params.position_bound; }
};

/// Deterministic 128x128 RGB raster with area-coverage antialiasing.
Image render(const State& state, const EnvParams& params = {});

}  // namespace cartvis
