#include <algorithm>
#include <charconv>
#include <fstream>
#include <random>
#include <sstream>

#include "cartvis/dataset.hpp"
#include "cartvis/error.hpp"

namespace cartvis {

namespace {

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Next non-exhausted cell at or after `cursor` whose count is at most the
/// mean; falls back to the next non-exhausted cell.
std::size_t next_reset_bin(const BinTable& hist, const std::vector<bool>& exhausted, std::size_t cursor,
                           std::size_t produced) {
  const std::size_t cells = hist.size();
  const double mean = double(produced) / double(cells);
  std::size_t fallback = cells;
  for (std::size_t k = 0; k < cells; ++k) {
    const std::size_t bin = (cursor + k) % cells;
    if (exhausted[bin]) continue;
    if (fallback == cells) fallback = bin;
    if (double(hist.counts()[bin]) <= mean) return bin;
  }
  if (fallback == cells) throw Error(ErrorKind::InvalidArgument, "every reset cell is exhausted; no samples can be generated");
  return fallback;
}

}  // namespace

CollectResult generate(const CollectConfig& config, const EnvParams& env,
                       const std::function<void(const SequenceSample&)>& sink) {
  if (config.samples < 1) throw Error(ErrorKind::InvalidArgument, "collect needs at least one sample");
  CollectResult result{0, 0, BinTable(config.bins_per_dim, config.velocity_cap, config.angular_velocity_cap, env), {}};
  BinTable& hist = result.histogram;

  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<int> barren(hist.size(), 0);
  std::vector<bool> exhausted(hist.size(), false);
  std::size_t cursor = 0;

  CartPole pole(env);
  std::vector<State> states;
  std::vector<Action> actions;
  std::vector<std::vector<std::uint8_t>> frames;
  SequenceSample sample;

  while (result.samples < config.samples) {
    std::size_t bin = 0;
    if (config.binned_resets) {
      bin = next_reset_bin(hist, exhausted, cursor, result.samples);
      cursor = (bin + 1) % hist.size();
      pole.reset(rng(), hist, bin);
    } else {
      pole.reset(rng());
    }

    states.assign(1, pole.state());
    actions.clear();
    frames.clear();
    while (!pole.done()) {
      frames.push_back(downsample_bytes(render(pole.state(), env)));
      const Action a = coin(rng) ? Action::Right : Action::Left;
      actions.push_back(a);
      states.push_back(pole.step(a).next_state);
    }

    const std::size_t steps = actions.size();
    std::size_t emitted = 0;
    for (std::size_t k = 0; k + kWindow <= steps && result.samples < config.samples; ++k) {
      sample.episode = static_cast<std::uint32_t>(result.episodes);
      sample.step = static_cast<std::uint32_t>(k);
      for (int t = 0; t < kWindow; ++t) {
        std::copy(frames[k + t].begin(), frames[k + t].end(), sample.frames[t].begin());
        sample.actions[t] = actions[k + t];
      }
      sample.target = states[k + kWindow];
      sink(sample);
      hist.record(sample.target);
      ++result.samples;
      ++emitted;
    }

    if (config.binned_resets) {
      barren[bin] = emitted == 0 ? barren[bin] + 1 : 0;
      if (barren[bin] >= config.max_barren_resets) exhausted[bin] = true;
    }
    ++result.episodes;
  }

  Manifest& m = result.manifest;
  m["format_version"] = std::to_string(kDatasetVersion);
  m["sample_count"] = std::to_string(result.samples);
  m["episode_count"] = std::to_string(result.episodes);
  m["occupied_cells"] = std::to_string(result.histogram.occupied());
  m["bin_imbalance"] = format_double(result.histogram.imbalance());
  m["seed"] = std::to_string(config.seed);
  m["binned_resets"] = config.binned_resets ? "true" : "false";
  m["bins_per_dim"] = std::to_string(config.bins_per_dim);
  m["velocity_cap"] = format_double(config.velocity_cap);
  m["angular_velocity_cap"] = format_double(config.angular_velocity_cap);
  m["split_ratio"] = format_double(config.split_ratio);
  m["split_seed"] = std::to_string(config.split_seed);
  const auto sp = split(result.samples, config.split_ratio, config.split_seed);
  m["train_count"] = std::to_string(sp.train.size());
  m["val_count"] = std::to_string(sp.val.size());
  m["frame_size"] = std::to_string(kFrameSize);
  m["frame_channels"] = std::to_string(kFrameChannels);
  m["window"] = std::to_string(kWindow);
  m["frame_encoding"] = "u8 = round_half_up(mean of 2x2 block of the 128x128 render); value = u8 / 255";
  m["env.gravity"] = format_double(env.gravity);
  m["env.cart_mass"] = format_double(env.cart_mass);
  m["env.pole_mass"] = format_double(env.pole_mass);
  m["env.pole_half_length"] = format_double(env.pole_half_length);
  m["env.force_magnitude"] = format_double(env.force_magnitude);
  m["env.time_step"] = format_double(env.time_step);
  m["env.position_bound"] = format_double(env.position_bound);
  m["env.angle_bound"] = format_double(env.angle_bound);
  m["env.max_steps"] = std::to_string(env.max_steps);
  return result;
}

CollectResult collect(const std::filesystem::path& dir, const CollectConfig& config, const EnvParams& env) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const auto data_path = dir / "dataset.bin";
  const auto manifest_path = dir / "manifest.txt";
  const auto bins_path = dir / "bins.csv";
  auto cleanup = [&] {
    std::filesystem::remove(data_path, ec);
    std::filesystem::remove(manifest_path, ec);
    std::filesystem::remove(bins_path, ec);
  };

  try {
    DatasetWriter writer(data_path);
    CollectResult result = generate(config, env, [&](const SequenceSample& s) { writer.append(s); });
    writer.close();
    write_manifest(manifest_path, result.manifest);

    std::ofstream out(bins_path, std::ios::trunc);
    out << "bin,x_bin,x_dot_bin,theta_bin,theta_dot_bin,count\n";
    for (std::size_t b = 0; b < result.histogram.size(); ++b) {
      const auto idx = result.histogram.unflatten(b);
      out << b << ',' << idx[0] << ',' << idx[1] << ',' << idx[2] << ',' << idx[3] << ','
          << result.histogram.counts()[b] << '\n';
    }
    if (!out) throw Error(ErrorKind::Io, "write failed for " + bins_path.string());
    return result;
  } catch (...) {
    cleanup();
    throw;
  }
}

}  // namespace cartvis
