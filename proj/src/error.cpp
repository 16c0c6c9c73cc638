#include "cartvis/error.hpp"

namespace cartvis {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::Io: return "io";
    case ErrorKind::Corrupt: return "corrupt";
    case ErrorKind::Version: return "version";
    case ErrorKind::Config: return "config";
    case ErrorKind::MissingArtifact: return "missing_artifact";
    case ErrorKind::Locked: return "locked";
  }
  return "unknown";
}

}  // namespace cartvis
