// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hdriqa::cli {

// Runs one invocation (args exclude the program name) and returns the exit
// code: 0 ok, 1 usage, 2 data or format error, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hdriqa::cli
