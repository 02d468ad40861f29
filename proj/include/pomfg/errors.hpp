// Error taxonomy shared by all modules. Anticipated failures are thrown as
// typed exceptions; the CLI maps each class to a fixed process exit code.
#pragma once

#include <stdexcept>
#include <string>

namespace pomfg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments to an operation (empty input, mismatched grids, ...).
struct InvalidInput : Error {
  using Error::Error;
};

// Invalid configuration detected at parse/construction time (CFL bound,
// nonpositive sigma, unknown key, singular observation covariance, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite or otherwise unusable numerics produced mid-computation.
struct NumericalError : Error {
  using Error::Error;
};

// A filter state became unusable (mass under/overflow, boundary escape,
// all-weight underflow). Carries the offending simulation time.
struct FilterBlowup : Error {
  explicit FilterBlowup(const std::string& what, double t_event = -1.0)
      : Error(what), t(t_event) {}
  double t;
};

// Point evaluation outside the model's admissible domain (e.g. Gamma <= 0).
struct DomainError : Error {
  using Error::Error;
};

// CLI exit-code contract: config errors 2, numerical errors 3, blowup 4.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const FilterBlowup*>(&e)) return 4;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const DomainError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const InvalidInput*>(&e)) return 2;
  return 1;
}

}  // namespace pomfg
