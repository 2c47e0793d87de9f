#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace voltrack {

/// Base class for all voltrack errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VOLTRACK_ERROR_TYPE(Name)      \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  };

VOLTRACK_ERROR_TYPE(DegenerateProjection)
VOLTRACK_ERROR_TYPE(DegenerateLine)
VOLTRACK_ERROR_TYPE(InsufficientViews)
VOLTRACK_ERROR_TYPE(IllConditioned)
VOLTRACK_ERROR_TYPE(ConfigInvalid)
VOLTRACK_ERROR_TYPE(ResolutionTooSmall)
VOLTRACK_ERROR_TYPE(NonPositiveTemperature)
VOLTRACK_ERROR_TYPE(ShapeMismatch)
VOLTRACK_ERROR_TYPE(DimensionMismatch)
VOLTRACK_ERROR_TYPE(StaleTape)
VOLTRACK_ERROR_TYPE(IndexMismatch)
VOLTRACK_ERROR_TYPE(NonFinite)
VOLTRACK_ERROR_TYPE(DivergenceDetected)
VOLTRACK_ERROR_TYPE(CalibrationMissing)
VOLTRACK_ERROR_TYPE(FrameGap)
VOLTRACK_ERROR_TYPE(SpecMismatch)
VOLTRACK_ERROR_TYPE(EmptyIntersection)
VOLTRACK_ERROR_TYPE(UnknownSuite)
VOLTRACK_ERROR_TYPE(IoError)

#undef VOLTRACK_ERROR_TYPE

/// Deterministic random stream (xoshiro256++ seeded via splitmix64).
/// Output is identical across platforms and standard libraries, so files
/// generated from a seed are byte-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Inclusive integer range.
  int uniform_int(int lo, int hi);
  /// Standard normal via Marsaglia polar method.
  double normal();
  double normal(double mean, double sigma);

 private:
  uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derives an independent child seed from a root seed and a stream tag.
/// All randomness in a command flows from one root seed split this way.
uint64_t derive_seed(uint64_t root, std::string_view tag);

}  // namespace voltrack
