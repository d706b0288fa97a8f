#pragma once

#include <iosfwd>

namespace hens::cli {

/// Runs the `hens` command line. Exit codes: 0 success, 1 usage error,
/// 2 data error, 3 numerical failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hens::cli
