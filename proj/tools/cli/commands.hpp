#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "run_config.hpp"

namespace cral::cli {

/// Runs one command and writes its artifacts under config.out_dir:
/// config.resolved, metrics.jsonl, summary.tsv and checkpoints. Returns the
/// process exit status; on failure an error record is appended to the
/// metrics stream and a diagnostic goes to `err`.
int run(const RunConfig& config, std::ostream& err);

/// Full command-line entry: `cral <command> --config <path> [--set k=v ...] --out <dir>`.
int main_with_args(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cral::cli
