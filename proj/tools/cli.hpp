#pragma once

#include <iosfwd>

namespace stgnp::cli {

/// Runs one subcommand. Returns 0 on success, 1 when a check or the command
/// itself fails, 2 on a usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stgnp::cli
