#pragma once

#include <ostream>

namespace fskws::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// Entry point of the `fskws` tool: synth, train, eval and classify.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fskws::cli
