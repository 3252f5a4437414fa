#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fssuavl::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kRunFailed = 1,  // training diverged, aggregation failed, ...
  kUsage = 2,      // bad command line
  kConfig = 3,     // config failed validation, run directory conflict
  kInput = 4,      // missing or malformed input file (checkpoint, dataset, config)
};

// Entry point shared by main() and the tests. `args[0]` is the program name.
// Results go to `out` as one JSON object per line; a failure writes exactly one
// JSON line {"error": kind, "command": ..., "message": ...} to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// <run>/checkpoints/round_0007.ckpt (or .../checkpoints/<sub>/round_0007.ckpt).
std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int round, const std::string& sub = "");

// Highest-round round_*.ckpt directly inside `dir`, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir);

}  // namespace fssuavl::cli
