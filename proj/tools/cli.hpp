#pragma once

namespace vithd {

/// Entry point of the `vithd` command line. Returns 0 on success, 1 on a
/// validation or usage error and 2 on a runtime failure.
int run_command(int argc, const char* const* argv);

} // namespace vithd
