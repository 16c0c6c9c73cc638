#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cartvis {

// Error classes surface on the CLI as the first token of the failure line.
enum class ErrorKind {
  InvalidArgument,
  Dimension,
  NonFinite,
  Io,
  Corrupt,
  Version,
  Config,
  MissingArtifact,
  Locked,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cartvis
