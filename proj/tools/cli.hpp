#pragma once

#include <iosfwd>

namespace mpc {

/// Entry point of the `mpc` tool. Returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mpc
