#pragma once

#include <stdexcept>
#include <string>

namespace aploc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define APLOC_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

APLOC_DEFINE_ERROR(InvalidData)         // non-finite or empty inputs
APLOC_DEFINE_ERROR(NumericalError)      // eigensolver or factorization failure
APLOC_DEFINE_ERROR(SingularPencil)      // generalized eigenproblem with numerically zero G
APLOC_DEFINE_ERROR(InvalidGeometry)     // sensor/source placement violating the conductor model
APLOC_DEFINE_ERROR(DegenerateGrid)      // source-space grid with fewer than 2 points
APLOC_DEFINE_ERROR(FormatError)         // malformed gain-table or dataset file
APLOC_DEFINE_ERROR(DegenerateWaveforms) // waveform orthonormalization failed (N too small)
APLOC_DEFINE_ERROR(SilentSources)       // all candidate topographies are (numerically) zero
APLOC_DEFINE_ERROR(SingularSystem)      // rank-deficient least-squares system with ridge off
APLOC_DEFINE_ERROR(InsufficientGrid)    // grid has fewer points than requested sources
APLOC_DEFINE_ERROR(ConfigError)         // bad solver/plan configuration

#undef APLOC_DEFINE_ERROR

}  // namespace aploc
