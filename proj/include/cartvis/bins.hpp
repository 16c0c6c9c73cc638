#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "cartvis/env.hpp"

namespace cartvis {

/// Regular grid over (x, x_dot, theta, theta_dot) used for balanced resets and
/// the coverage histogram. Values outside the grid are binned into the edge cell.
class BinTable {
 public:
  BinTable(int bins_per_dim, double velocity_cap, double angular_velocity_cap,
           const EnvParams& env = {});

  std::size_t size() const { return counts_.size(); }
  int bins_per_dim() const { return bins_per_dim_; }
  const std::vector<double>& edges(int dim) const { return edges_[dim]; }

  std::size_t index_of(const State& s) const;
  std::array<int, 4> unflatten(std::size_t bin) const;
  /// Lower and upper corners of a cell. Throws on an invalid index.
  std::pair<StateVec, StateVec> bounds(std::size_t bin) const;

  void record(const State& s) { ++counts_[index_of(s)]; }
  const std::vector<std::size_t>& counts() const { return counts_; }
  void clear_counts();

  /// Cells with at least one sample. Some cells cannot hold a target at all
  /// (e.g. theta at its lower edge with a large positive theta_dot).
  std::size_t occupied() const;
  /// max/min count over occupied cells; +inf when every cell is empty.
  double imbalance() const;

 private:
  int bins_per_dim_;
  std::array<std::vector<double>, 4> edges_;
  std::vector<std::size_t> counts_;
};

}  // namespace cartvis
