#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

namespace featviz::test {

#ifndef FEATVIZ_FIXTURES_DIR
#define FEATVIZ_FIXTURES_DIR "fixtures"
#endif

inline std::string fixture_path(const std::string& name) {
  return (std::filesystem::path(FEATVIZ_FIXTURES_DIR) / name).string();
}

// Per-process scratch directory, wiped lazily by the OS temp cleaner.
inline std::filesystem::path temp_dir() {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() /
             ("featviz_test_" + std::to_string(static_cast<long long>(::getpid())));
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

inline std::string temp_path(const std::string& name) { return (temp_dir() / name).string(); }

}  // namespace featviz::test
