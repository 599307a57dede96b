#pragma once

#include <iosfwd>

namespace cmem {

/// Entry point of the conceptmem command line. Returns 0 on success, 1 for
/// configuration, data or checkpoint errors and 2 for usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmem
