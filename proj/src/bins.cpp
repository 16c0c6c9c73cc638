#include "cartvis/bins.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cartvis/error.hpp"

namespace cartvis {

BinTable::BinTable(int bins_per_dim, double velocity_cap, double angular_velocity_cap, const EnvParams& env)
    : bins_per_dim_(bins_per_dim) {
  if (bins_per_dim < 1) throw Error(ErrorKind::InvalidArgument, "bins_per_dim must be >= 1");
  if (!(velocity_cap > 0.0) || !(angular_velocity_cap > 0.0))
    throw Error(ErrorKind::InvalidArgument, "velocity caps must be positive");
  const double caps[4] = {env.position_bound, velocity_cap, env.angle_bound, angular_velocity_cap};
  for (int d = 0; d < 4; ++d) {
    auto& e = edges_[d];
    e.resize(bins_per_dim + 1);
    for (int i = 0; i <= bins_per_dim; ++i) e[i] = -caps[d] + 2.0 * caps[d] * i / bins_per_dim;
    e.back() = caps[d];
  }
  std::size_t cells = 1;
  for (int d = 0; d < 4; ++d) cells *= bins_per_dim;
  counts_.assign(cells, 0);
}

std::size_t BinTable::index_of(const State& s) const {
  const double v[4] = {s.x, s.x_dot, s.theta, s.theta_dot};
  std::size_t flat = 0;
  for (int d = 0; d < 4; ++d) {
    const auto& e = edges_[d];
    // upper_bound over interior edges gives the cell; outside values clamp.
    const auto it = std::upper_bound(e.begin() + 1, e.end() - 1, v[d]);
    const std::size_t i = static_cast<std::size_t>(it - (e.begin() + 1));
    flat = flat * bins_per_dim_ + i;
  }
  return flat;
}

std::array<int, 4> BinTable::unflatten(std::size_t bin) const {
  std::array<int, 4> idx{};
  for (int d = 3; d >= 0; --d) {
    idx[d] = static_cast<int>(bin % bins_per_dim_);
    bin /= bins_per_dim_;
  }
  return idx;
}

std::pair<StateVec, StateVec> BinTable::bounds(std::size_t bin) const {
  if (bin >= size())
    throw Error(ErrorKind::InvalidArgument,
                "bin index " + std::to_string(bin) + " out of range [0, " + std::to_string(size()) + ")");
  const auto idx = unflatten(bin);
  StateVec lo, hi;
  for (int d = 0; d < 4; ++d) {
    lo(d) = edges_[d][idx[d]];
    hi(d) = edges_[d][idx[d] + 1];
  }
  return {lo, hi};
}

void BinTable::clear_counts() { std::fill(counts_.begin(), counts_.end(), 0); }

std::size_t BinTable::occupied() const {
  return std::size_t(std::count_if(counts_.begin(), counts_.end(), [](std::size_t c) { return c > 0; }));
}

double BinTable::imbalance() const {
  std::size_t mn = std::numeric_limits<std::size_t>::max(), mx = 0;
  for (std::size_t c : counts_) {
    if (c == 0) continue;
    mn = std::min(mn, c);
    mx = std::max(mx, c);
  }
  if (mx == 0) return std::numeric_limits<double>::infinity();
  return double(mx) / double(mn);
}

}  // namespace cartvis
