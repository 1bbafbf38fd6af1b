#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace styleremix {

/// Runs one command line (argv[0] included). Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace styleremix
