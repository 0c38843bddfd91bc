#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace areal {

// Runs one subcommand (args exclude the program name). Returns the process
// exit code; failures are reported on err as a single line
//   error kind=<kind> [file=<f> line=<l> column=<c>] msg=<text>
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace areal
