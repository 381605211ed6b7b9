#ifndef OPADV_PIPELINE_HPP_
#define OPADV_PIPELINE_HPP_

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "opadv/config.hpp"

namespace opadv::pipeline {

enum class LogLevel { kQuiet, kInfo, kDebug };

/// OPADV_LOG=quiet|info|debug, default info.
LogLevel log_level_from_env();

struct Streams {
  std::ostream& out;  // results
  std::ostream& log;  // banner and progress
  LogLevel level = LogLevel::kInfo;
};

const std::vector<std::string>& subcommands();
std::string usage();

/// Runs one pipeline stage with every path resolved against `workdir`.
/// Returns 0 on success, 1 on ValidationError (bad input, missing artifact),
/// 2 on RuntimeFailure or any other exception.
int dispatch(std::string_view subcommand, const config::RunConfig& cfg,
             const std::filesystem::path& workdir, Streams streams);
int dispatch(std::string_view subcommand, const config::RunConfig& cfg,
             const std::filesystem::path& workdir);

}  // namespace opadv::pipeline

#endif  // OPADV_PIPELINE_HPP_
