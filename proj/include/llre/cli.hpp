#pragma once

#include <string>
#include <vector>

namespace llre::cli {

// Dispatches one command line (without the program name). Returns the
// process exit code: 0 on success, 1 with a single-line "error: ..." on
// stderr for any failure.
int run(const std::vector<std::string>& args);

} // namespace llre::cli
