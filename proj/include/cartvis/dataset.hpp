#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cartvis/bins.hpp"
#include "cartvis/env.hpp"

namespace cartvis {

inline constexpr int kWindow = 4;
inline constexpr int kFrameSize = 64;
inline constexpr int kFrameChannels = 3;
inline constexpr int kFramePixels = kFrameSize * kFrameSize * kFrameChannels;

/// Preprocessed frame, HWC order, values in [0, 1].
using FrameVec = Eigen::Matrix<float, Eigen::Dynamic, 1>;

/// 2x2 area average of a 128x128 raster scaled by 1/255.
FrameVec preprocess(const Image& raw);

/// The 8-bit storage form of `preprocess`: the 2x2 average rounded half up.
std::vector<std::uint8_t> downsample_bytes(const Image& raw);

/// Inverse of the storage quantization, byte / 255.
template <typename Scalar>
void normalize_bytes(std::span<const std::uint8_t> bytes, Scalar* out) {
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = Scalar(bytes[i]) / Scalar(255);
}

struct SequenceSample {
  std::uint32_t episode = 0;
  std::uint32_t step = 0;  // episode step of the first frame
  std::array<std::array<std::uint8_t, kFramePixels>, kWindow> frames{};
  std::array<Action, kWindow> actions{};
  State target;
};

// On-disk layout -------------------------------------------------------------
//   header: magic "CVDS", u32 version, u64 record count, u32 height, u32 width,
//           u32 channels, u32 window, u32 state dim
//   record: u32 episode, u32 step, window x (h*w*c) bytes, window action bytes,
//           state dim x f64 target
// All integers little endian.

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 4 + 8 + 5 * 4;
inline constexpr std::size_t kRecordBytes = 4 + 4 + std::size_t(kWindow) * kFramePixels + kWindow + 4 * 8;

class DatasetWriter {
 public:
  explicit DatasetWriter(std::filesystem::path path);
  ~DatasetWriter();
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void append(const SequenceSample& sample);
  /// Patches the record count into the header. Removes the file on failure.
  void close();
  std::uint64_t count() const { return count_; }

 private:
  void fail(const std::string& what);

  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t count_ = 0;
  bool closed_ = false;
};

/// Read-only memory-mapped view of a dataset file.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);
  ~DatasetReader();
  DatasetReader(const DatasetReader&) = delete;
  DatasetReader& operator=(const DatasetReader&) = delete;

  std::size_t size() const { return count_; }
  SequenceSample sample(std::size_t i) const;

  std::uint32_t episode(std::size_t i) const;
  std::uint32_t step(std::size_t i) const;
  std::span<const std::uint8_t> frame_bytes(std::size_t i, int t) const;
  Action action(std::size_t i, int t) const;
  State target(std::size_t i) const;

  /// Fills a time-major batch: frames (pixels x window*B, column t*B+b),
  /// actions (window x B) and targets (4 x B).
  template <typename Scalar>
  void load_batch(std::span<const std::size_t> ids,
                  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& frames,
                  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& actions,
                  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& targets) const;

 private:
  const std::uint8_t* record(std::size_t i) const;

  const std::uint8_t* data_ = nullptr;
  std::size_t bytes_ = 0;
  std::size_t count_ = 0;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded random partition with |train| = round(ratio * n).
Split split(std::size_t n, double ratio, std::uint64_t seed);

/// Ordered key/value text file, `key = value` per line.
using Manifest = std::map<std::string, std::string>;
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

struct CollectConfig {
  std::size_t samples = 200000;
  int bins_per_dim = 5;
  double velocity_cap = 3.0;
  double angular_velocity_cap = 3.0;
  std::uint64_t seed = 1;
  double split_ratio = 0.8;
  std::uint64_t split_seed = 2;
  /// false: every episode starts from the narrow [-0.05, 0.05] reset.
  bool binned_resets = true;
  /// Consecutive sample-less episodes before a reset cell is skipped.
  int max_barren_resets = 8;
};

struct CollectResult {
  std::size_t samples = 0;
  std::size_t episodes = 0;
  BinTable histogram;
  Manifest manifest;
};

/// Random-action rollouts from balanced resets, windowed into samples.
/// Writes `dataset.bin`, `manifest.txt` and `bins.csv` into `dir`.
CollectResult collect(const std::filesystem::path& dir, const CollectConfig& config,
                      const EnvParams& env = {});

/// Same generator without persistence; `sink` sees every sample in order.
CollectResult generate(const CollectConfig& config, const EnvParams& env,
                       const std::function<void(const SequenceSample&)>& sink);

}  // namespace cartvis
