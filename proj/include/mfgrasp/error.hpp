#pragma once

#include <stdexcept>
#include <string>

namespace mfgrasp {

// Error classes map onto CLI exit codes: domain failures exit 1, usage and
// configuration problems exit 2.
enum class ErrorKind {
  Format,         // malformed input file
  Precondition,   // caller violated an operation contract
  Config,         // bad or unknown configuration key
  NoGrasp,        // representation has no valid cell
  Infeasible,     // grasp cannot be realised by the hand
  SceneTooDense,  // placement rejection budget exhausted
  NoFeasibleGrasp,
  EmptyGrid,      // frame not near any surface
  LostTrack,
  Diverged,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind);

// True for errors that reflect a bad invocation rather than a grasping outcome.
bool is_usage_error(ErrorKind kind);

}  // namespace mfgrasp
