#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace evdeform::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { kOk = 0, kNumericalFailure = 1, kInvalidInput = 2 };

/// Runs `evdeform` with the command-line arguments, program name excluded.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Stream file for a camera inside a simulate/extract directory.
std::filesystem::path stream_file(const std::filesystem::path& dir, int camera_id, const std::string& format);
/// Observation CSV for a camera; marker -1 means a single-marker run.
std::filesystem::path observation_file(const std::filesystem::path& dir, int camera_id, int marker = -1);

}  // namespace evdeform::cli
