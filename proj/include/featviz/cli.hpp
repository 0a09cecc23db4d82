#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace featviz::cli {

// Executes one featviz command line (without the program name). Every file
// the command writes gets a JSON manifest next to it; re-running a manifest
// through the `replay` subcommand reproduces all outputs byte for byte.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace featviz::cli
