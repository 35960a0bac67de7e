#pragma once

#include <ostream>

namespace diffedit {

// Entry point of the `diffedit` tool. Subcommands: pretrain, finetune, edit,
// bench, sweep. Global flags: --config PATH, --seed N, --out DIR,
// --set key=value (repeatable). Returns the process exit code: 0 on
// success, 2 for configuration or input errors, 3 for runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace diffedit
