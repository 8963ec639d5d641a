#pragma once

#include <string>
#include <vector>

namespace dw {

// Dispatches the subcommands (gen-data, train-tokenizer, train-predictor,
// eval, flops, sweep, plot). Returns the process exit code; failures print a
// single machine-parsable "error: ..." line on stderr.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace dw
