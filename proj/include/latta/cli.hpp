#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace latta {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

/// Environment variable naming the default --out directory.
constexpr const char* kOutDirEnv = "LATTA_OUT_DIR";

/// Entry point behind the `latta` executable. `args` excludes the program
/// name. Data goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace latta
