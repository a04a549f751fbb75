#pragma once

#include <string>
#include <vector>

namespace evomerge::cli {

// Full command-line entry point. Subcommands: train-sources, merge,
// evolve (--mode ps|dfs|hybrid), eval, report. Global flags: --config PATH,
// --seed N, --out DIR, --threads N.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
int run(const std::vector<std::string>& args);

}  // namespace evomerge::cli
