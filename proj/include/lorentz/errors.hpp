#pragma once

#include <stdexcept>
#include <string>

namespace lorentz {

/// Malformed or out-of-range user input (bad disc id, overlapping discs, bad config).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A flight exceeded the horizon bound without meeting a scatterer.
class HorizonViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The curved-flight integrator could not make progress.
class IntegrationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incoming direction is tangent to the boundary within tolerance.
class GrazingCollision : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lorentz
