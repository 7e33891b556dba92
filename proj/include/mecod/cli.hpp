#pragma once

#include <ostream>

namespace mecod {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Entry point of the `mecod` tool: synth, train, eval, diagnose, report.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mecod
