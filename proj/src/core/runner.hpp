#pragma once

#include <string>

#include "core/config.hpp"

namespace ctalab {

struct RunOptions {
  std::string out_dir = "out";
  int jobs = 1;
  std::uint64_t seed = 0;
};

/// Executes one experiment subcommand. Returns the process exit status:
/// 0 ok, 2 config error, 3 numerical failure, 4 acceptance-threshold failure.
/// Artifacts are written atomically under out_dir and listed (with content
/// hashes) in out_dir/manifest.json.
int run_subcommand(const std::string& subcommand, const Config& cfg, const RunOptions& opts,
                   std::string* error_message = nullptr);

bool is_known_subcommand(const std::string& name);
const char* known_subcommands();

}  // namespace ctalab
