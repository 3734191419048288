#pragma once

// Command dispatch for the `lorentz` tool. Every command writes CSV and/or
// JSON artifacts that embed the config echo, seed, build id and flagged
// counts; wall-clock goes to a timing.json sidecar so the artifacts
// themselves are byte-reproducible.

#include <iosfwd>
#include <string>
#include <vector>

namespace lorentz {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitDynamics = 3,
  kExitHorizon = 4,
  kExitUsage = 64,
};

const char *build_id();

/// Runs the tool; `args` excludes the program name.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string &path);

}  // namespace lorentz
