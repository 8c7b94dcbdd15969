#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace digen {

// Runs one command-line invocation; args excludes the program name. Normal
// output goes to `out`, diagnostics and warnings to `err`. Returns the
// process exit code: 0 success, 2 usage or configuration error, 3 runtime
// failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace digen
