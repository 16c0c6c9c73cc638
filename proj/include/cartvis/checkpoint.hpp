#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cartvis/layers.hpp"

namespace cartvis {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned container of named tensors plus string metadata, trailed by a
/// 64-bit FNV-1a checksum. Tensors keep their scalar width (f32 or f64).
class Checkpoint {
 public:
  explicit Checkpoint(std::string kind = {}) : kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
  void set_meta(const std::string& key, long long value) { meta_[key] = std::to_string(value); }
  bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
  const std::string& meta(const std::string& key) const;
  long long meta_int(const std::string& key) const;

  template <typename Scalar>
  void add(const std::string& name, const nn::Matrix<Scalar>& m);
  bool has(const std::string& name) const;
  /// Converts on scalar-width mismatch; exact when widths agree.
  template <typename Scalar>
  nn::Matrix<Scalar> get(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  /// Throws Version on format mismatch, Corrupt on truncation or checksum
  /// failure, InvalidArgument when `expected_kind` is set and differs.
  static Checkpoint load(const std::filesystem::path& path, const std::string& expected_kind = {});

 private:
  struct Tensor {
    std::string name;
    std::uint8_t width = 8;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> bytes;
  };
  const Tensor& find(const std::string& name) const;

  std::string kind_;
  std::map<std::string, std::string> meta_;
  std::vector<Tensor> tensors_;
};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t seed = 1469598103934665603ull);

}  // namespace cartvis
