#pragma once

#include <iosfwd>

namespace flare::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitFallback = 2;
inline constexpr int kExitUsage = 64;

/// Runs one `flare` command line. Output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace flare::cli
