#ifndef MASKFUSE_CLI_H_
#define MASKFUSE_CLI_H_

#include <iosfwd>

namespace maskfuse {

inline constexpr const char* kToolVersion = "0.1.0";

// Entry point of the `maskfuse` command. Returns 0 on success, 1 on a
// validation error or bad usage, 2 on an I/O error.
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace maskfuse

#endif  // MASKFUSE_CLI_H_
