#pragma once
// Shared helpers for the unit tests.

#include <filesystem>
#include <random>
#include <string>

#include "laflow/rng.hpp"
#include "laflow/tape.hpp"

namespace laflow::test {

constexpr double kGradTolerance = 1e-4;
constexpr std::uint64_t kGradSeeds[] = {1, 2, 3, 5, 8};

inline Matrix randn(Index rows, Index cols, Rng& rng) { return standard_normal<double>(rows, cols, rng); }

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("laflow-" + tag + "-" + std::to_string(std::random_device{}()) + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  static std::uint64_t& counter() {
    static std::uint64_t c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace laflow::test
