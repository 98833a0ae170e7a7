#pragma once

#include <string>
#include <vector>

namespace qsync {

// Exit status: 0 success, 1 usage/config error, 2 pipeline failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace qsync
