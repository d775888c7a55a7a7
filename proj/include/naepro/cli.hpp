// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 1 runtime failure (one
// line "naepro: error[<kind>]: <message>" on stderr), 2 usage error.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace naepro::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace naepro::cli
