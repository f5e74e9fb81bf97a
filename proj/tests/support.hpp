#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "carto/error.hpp"
#include "carto/knowledge_tree.hpp"
#include "carto/llm/gateway.hpp"
#include "carto/llm/mock_provider.hpp"
#include "generators.hpp"

namespace carto {
inline void PrintTo(ErrorCode code, std::ostream* os) { *os << to_string(code); }
}  // namespace carto

namespace testing_support {

/// Error code thrown by `fn`; records a failure if nothing is thrown.
template <typename Fn>
carto::ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const carto::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return carto::ErrorCode::IoError;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("carto-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
