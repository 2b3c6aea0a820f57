#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace siammask::cli {

/// Runs one command line (args[0] is the program name). Failures print a single JSON
/// error line to `err` and return a nonzero status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace siammask::cli
