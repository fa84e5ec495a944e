#pragma once

#include <iosfwd>

namespace mixflow::cli {

/// Parses the command line and runs the subcommand. Returns the process
/// exit code (0 ok, 2 parse, 3 validation/format, 4 simulation failure).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mixflow::cli
