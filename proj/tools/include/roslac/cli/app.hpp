#pragma once

namespace roslac::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Parses arguments and runs one subcommand; returns the process exit code.
int main(int argc, const char* const* argv);

}  // namespace roslac::cli
