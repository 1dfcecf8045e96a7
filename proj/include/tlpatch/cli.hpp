#pragma once

#include <string>
#include <vector>

namespace tlpatch::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kDataError = 3,
    kNumericError = 4,
};

// Entry point: `tlpatch <train|evaluate|apply|export-print|render-synthetic> [flags]`.
// Every command accepts --config <file> (flat key = value, keys are the long flag names),
// --seed, --out-dir and --profile; command-line flags override the file.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace tlpatch::cli
