#pragma once

// The `foe` command line. Exit codes: 0 success, 1 construction error,
// 2 parse error, 3 unknown type, 4 type mismatch, 5 failed check.

#include <iosfwd>
#include <string>
#include <vector>

namespace foe::cli {

enum Exit { kOk = 0, kError = 1, kParse = 2, kUnknown = 3, kMismatch = 4, kCheckFailed = 5 };

/// args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace foe::cli
