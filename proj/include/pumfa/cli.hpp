#pragma once

#include <iosfwd>

namespace pumfa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point behind the `pumfa` binary. 0 on success, 1 on usage errors,
/// 2 on runtime failures.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace pumfa
