#pragma once

#include <stdexcept>
#include <string>

namespace gvq {

// Bad user-supplied configuration: out-of-range fields, unknown keys,
// infeasible environment layouts, malformed files.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke an API precondition (mismatched sizes, reused tape,
// missing gradient entry). Always a programming error, never data-driven.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Training produced non-finite values; carries enough text to locate the
// offending term.
struct TrainingAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gvq
