// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace longsum {

/// Runs one subcommand (args exclude the program name). Prints a one-line
/// JSON summary to `out` on success, a one-line JSON error to `err`
/// otherwise. Returns 0 on success, 2 for a missing or unknown subcommand,
/// 1 for any other failure.
int run_command(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace longsum
