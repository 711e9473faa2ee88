#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

namespace cotprune::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAborted = 2;
inline constexpr int kExitConfig = 3;

/// Parses `args` (args[0] is the program name) and runs one subcommand.
/// `stop` is polled between traces by the optimize command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::atomic<bool>* stop = nullptr);

}  // namespace cotprune::cli
