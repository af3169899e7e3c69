#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mground/errors.hpp"

namespace mground::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitLsp = 4;
inline constexpr int kExitEvalInput = 5;
inline constexpr int kExitGradcheck = 6;

// Exit status for an error escaping `command`.
int exit_code_for(ErrorCode code, const std::string& command);

// args excludes the program name. Human-readable summaries go to `err`,
// data printed to the terminal goes to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mground::cli
