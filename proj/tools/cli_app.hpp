#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one batctl invocation. `args` excludes the program name.
/// Returns 0 on success, 1 for invalid arguments or configuration and 2 for
/// failures while running.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bat::cli
