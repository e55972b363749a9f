#pragma once

#include <string>
#include <vector>

namespace pcp {

// Dispatches one CLI invocation (args excludes the program name). Returns 0
// on success, 1 on usage errors, 2 on data/format errors.
int cli_dispatch(const std::vector<std::string>& args);

}  // namespace pcp
