#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace oodscore {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitRowFailure = 4;

/// Entry point for `oodscore <calibrate|score|eval|sweep|synth|report> [flags]`.
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads a flat key=value file into "--key=value" arguments. Blank lines and
/// lines starting with '#' are skipped; '_' in keys is read as '-'.
std::vector<std::string> config_file_args(const std::string& path);

}  // namespace oodscore
