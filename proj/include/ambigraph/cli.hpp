#pragma once

#include <iosfwd>

namespace ambigraph::cli {

enum ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kSolverFailure = 3,
  kInsufficientData = 4,
};

/// Entry point of the `ambigraph` tool: generate, solve, evaluate, experiment.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ambigraph::cli
