#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace editlab {

// Entry point behind the `editlab` binary. `args` excludes the program name.
// Returns 0 on success, 1 on runtime failure, 2 on usage errors.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace editlab
