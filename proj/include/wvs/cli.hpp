#pragma once

#include <iosfwd>

namespace wvs {

// Exit codes of the `wvs` tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,      // every input failed, or an unexpected error
    kExitBadInput = 2,     // invalid arguments or configuration
    kExitOrthogonal = 3,   // weak value requested for orthogonal selections
    kExitUnphysicalTof = 4 // TOF range not invertible on some detector
};

// Runs the command line `argv` (argv[0] is the program name), writing reports
// to `out` and diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace wvs
