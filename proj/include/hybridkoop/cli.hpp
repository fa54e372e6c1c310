#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hybridkoop::cli {

/// Runs one command line (without the program name). Exit codes: 0 success,
/// 1 validation or assumption failure, 2 usage or input error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hybridkoop::cli
