#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lift3d::cli {

inline constexpr const char* kOutputRootEnv = "LIFT3D_OUTPUT_ROOT";

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;

/// Runs one command line (args[0] is the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lift3d::cli
