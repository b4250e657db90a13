#pragma once

#include <stdexcept>
#include <string>

namespace mcausal {

// Error taxonomy. Each class corresponds to a distinct failure mode so
// callers (and tests) can catch precisely.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// data layer
struct MissingOutcome : Error { using Error::Error; };
struct NonBinary : Error { using Error::Error; };
struct UnknownColumn : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };

// glm layer
struct SingularDesign : Error { using Error::Error; };
struct NoPositiveWeight : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };

// estimation layer
struct EmptyStratum : Error { using Error::Error; };
struct DegenerateWeights : Error { using Error::Error; };
struct MismatchedData : Error { using Error::Error; };
struct AllMissingVariable : Error { using Error::Error; };

// inference layer
struct NoInfluenceValues : Error { using Error::Error; };
struct TooManyFailedResamples : Error { using Error::Error; };

// cli layer
struct ConfigError : Error { using Error::Error; };

}  // namespace mcausal
