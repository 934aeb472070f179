// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace splitveil {

// Entry point behind the binary; exposed so tests can drive subcommands
// in-process. Returns the process exit status (0 success, 1 runtime error,
// 2 usage error).
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, const char* const* argv);

}  // namespace splitveil
