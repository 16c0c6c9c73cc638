#include "cartvis/env.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cartvis/bins.hpp"
#include "cartvis/error.hpp"

namespace cartvis {

bool State::finite() const {
  return std::isfinite(x) && std::isfinite(x_dot) && std::isfinite(theta) && std::isfinite(theta_dot);
}

Action action_from_int(int value) {
  if (value != 0 && value != 1) throw Error(ErrorKind::InvalidArgument, "action must be 0 or 1, got " + std::to_string(value));
  return static_cast<Action>(value);
}

void EnvParams::validate() const {
  const double values[] = {gravity, cart_mass, pole_mass, pole_half_length, force_magnitude, time_step,
                           position_bound, angle_bound};
  for (double v : values)
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorKind::Config, "env parameters must be positive and finite");
  if (max_steps < 1) throw Error(ErrorKind::Config, "env.max_steps must be >= 1");
}

bool out_of_bounds(const EnvParams& params, const State& s) {
  return s.x < -params.position_bound || s.x > params.position_bound || s.theta < -params.angle_bound ||
         s.theta > params.angle_bound;
}

StepResult step(const EnvParams& p, const State& s, Action action) {
  if (!s.finite()) throw Error(ErrorKind::NonFinite, "step: state is not finite");
  const double force = action == Action::Right ? p.force_magnitude : -p.force_magnitude;
  const double total_mass = p.cart_mass + p.pole_mass;
  const double polemass_length = p.pole_mass * p.pole_half_length;
  const double sin_t = std::sin(s.theta);
  const double cos_t = std::cos(s.theta);

  const double temp = (force + polemass_length * s.theta_dot * s.theta_dot * sin_t) / total_mass;
  const double theta_acc = (p.gravity * sin_t - cos_t * temp) /
                           (p.pole_half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

  StepResult r;
  r.next_state.x = s.x + p.time_step * s.x_dot;
  r.next_state.x_dot = s.x_dot + p.time_step * x_acc;
  r.next_state.theta = s.theta + p.time_step * s.theta_dot;
  r.next_state.theta_dot = s.theta_dot + p.time_step * theta_acc;
  r.reward = 1.0;
  r.terminated = out_of_bounds(p, r.next_state);
  return r;
}

CartPole::CartPole(EnvParams params) : params_(params) { params_.validate(); }

State CartPole::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.05, 0.05);
  state_.x = dist(rng);
  state_.x_dot = dist(rng);
  state_.theta = dist(rng);
  state_.theta_dot = dist(rng);
  steps_ = 0;
  done_ = false;
  return state_;
}

State CartPole::reset(std::uint64_t seed, const BinTable& bins, std::size_t bin) {
  const auto [lo, hi] = bins.bounds(bin);
  std::mt19937_64 rng(seed);
  StateVec v;
  for (int d = 0; d < 4; ++d) v(d) = std::uniform_real_distribution<double>(lo(d), hi(d))(rng);
  state_ = State::from(v);
  steps_ = 0;
  done_ = false;
  return state_;
}

StepResult CartPole::step(Action action) {
  if (done_) throw Error(ErrorKind::InvalidArgument, "step called on a finished episode; reset first");
  StepResult r = cartvis::step(params_, state_, action);
  ++steps_;
  r.truncated = !r.terminated && steps_ >= params_.max_steps;
  state_ = r.next_state;
  done_ = r.terminated || r.truncated;
  return r;
}

// Rendering ------------------------------------------------------------------
//
// Geometry is evaluated relative to the vertical centre line (column 64) so
// that negating x and theta mirrors the raster exactly.

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackground{255, 255, 255};
constexpr Rgb kCartColor{0, 0, 0};
constexpr Rgb kPoleColor{202, 152, 101};

void blend(Image& img, int y, int x, const Rgb& color, double coverage) {
  if (coverage <= 0.0) return;
  coverage = std::min(coverage, 1.0);
  const double src[3] = {color.r, color.g, color.b};
  for (int c = 0; c < 3; ++c) {
    const double v = img.at(y, x, c) * (1.0 - coverage) + src[c] * coverage;
    img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
  }
}

}  // namespace

Image render(const State& state, const EnvParams& params) {
  using G = RenderGeometry;
  constexpr int n = G::kSize;
  constexpr double half = n / 2.0;
  Image img(n, n, 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>(kBackground.r);
      img.at(y, x, 1) = static_cast<std::uint8_t>(kBackground.g);
      img.at(y, x, 2) = static_cast<std::uint8_t>(kBackground.b);
    }

  const double pos = std::isfinite(state.x) ? std::clamp(state.x, -params.position_bound, params.position_bound) : 0.0;
  const double theta = std::isfinite(state.theta) ? state.theta : 0.0;
  const double u = pos * G::scale(params);
  const double left = u - G::kCartWidth / 2.0;
  const double right = u + G::kCartWidth / 2.0;

  // Cart: rows are pixel aligned, columns get fractional edge coverage.
  for (int x = 0; x < n; ++x) {
    const double lo = x - half, hi = x + 1 - half;
    const double cov = std::min(right, hi) - std::max(left, lo);
    if (cov <= 0.0) continue;
    for (int y = G::kCartTop; y < G::kCartTop + static_cast<int>(G::kCartHeight); ++y) blend(img, y, x, kCartColor, cov);
  }

  // Pole: capsule of width kPoleWidth around the pivot-to-tip segment, with a
  // one pixel linear coverage ramp on the distance.
  const double ax = u, ay = G::kCartTop;
  const double dx = G::kPoleLength * std::sin(theta);
  const double dy = -G::kPoleLength * std::cos(theta);
  const double len2 = dx * dx + dy * dy;
  const double radius = G::kPoleWidth / 2.0;
  const int y_min = std::max(0, static_cast<int>(std::floor(std::min(ay, ay + dy) - radius - 1)));
  const int y_max = std::min(n - 1, static_cast<int>(std::ceil(std::max(ay, ay + dy) + radius + 1)));
  for (int y = y_min; y <= y_max; ++y) {
    const double py = y + 0.5;
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5 - half;
      const double apx = px - ax, apy = py - ay;
      const double t = std::clamp((apx * dx + apy * dy) / len2, 0.0, 1.0);
      const double ex = apx - t * dx, ey = apy - t * dy;
      const double dist = std::sqrt(ex * ex + ey * ey);
      blend(img, y, x, kPoleColor, radius + 0.5 - dist);
    }
  }
  return img;
}

}  // namespace cartvis
