#pragma once

#include <atomic>
#include <filesystem>
#include <string>

namespace testsupport {

/// Fresh subdirectory under the system temp dir, unique per call.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("voltrack-" + tag + "-" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
