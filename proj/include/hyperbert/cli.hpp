#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hyperbert {

// Command-line entry point. `args` excludes the program name. Returns 0 on
// success, 2 on a usage error and 1 on any other failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace hyperbert
