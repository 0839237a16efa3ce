#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lwta {

/// Entry point behind the `lwta` executable. `args` excludes the program name. Returns the
/// process exit code: 0 when every requested artifact was written, 1 on a runtime error,
/// 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lwta
