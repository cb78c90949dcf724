#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace orthograd {

// Malformed or inconsistent run configuration (bad JSON, unknown keys,
// out-of-range values).  The message lists every problem found.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corrupt or incompatible serialized payload (optimizer blob, checkpoint,
// replay file): bad magic, version mismatch, kind mismatch, truncation.
struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a run rejects more steps than the configured budget allows.
struct StepFailureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure while writing run outputs or checkpoints.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void contract_failure(const char* expr, const char* file, int line) {
  std::fprintf(stderr, "contract violation: %s (%s:%d)\n", expr, file, line);
  std::abort();
}

}  // namespace orthograd

// Precondition check that stays on in release builds.  A failure is a
// programming error, not a recoverable condition, so it aborts.
#define OG_CHECK(cond) \
  do {                 \
    if (!(cond)) ::orthograd::contract_failure(#cond, __FILE__, __LINE__); \
  } while (0)
