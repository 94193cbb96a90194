#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ivddpc {

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

/// Subcommands: collect, run, bench, diag, summarize. Results go to `out`,
/// failures to `err` as a one-line JSON report.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace ivddpc
