#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace vgqe::cli {

/// Runs one command line (args[0] is the program name) and returns its exit status.
int run(const std::vector<std::string>& args);

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace vgqe::cli
