#pragma once

// Experiment runner. Subcommands: train, eval, ood, prune, gen-data, gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage, config or input error.

#include <string>
#include <vector>

namespace mgproto {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace mgproto
