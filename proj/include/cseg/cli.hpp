#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;    // bad flags, config, data or checkpoint
inline constexpr int kExitDiverged = 3;  // non-finite loss during training

/// Default output root when neither --out nor output_dir is given.
inline constexpr const char* kOutputRootEnv = "CSEG_OUTPUT_ROOT";

/// Runs the command line `args` (without the program name). Normal output
/// goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cseg::cli
