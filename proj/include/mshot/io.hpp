#pragma once

#include "mshot/common.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mshot {

/// Filesystem failure (exit code 3 at the CLI).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void append_f32le(std::string& out, const float* data, std::size_t n);
void read_f32le(const char* src, float* dst, std::size_t n);

/// Row-major little-endian float32 bytes of a matrix.
void append_matrix(std::string& out, const MatF& m);
MatF read_matrix(const char* src, Eigen::Index rows, Eigen::Index cols);

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& bytes);

/// FNV-1a 64-bit, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Results must
/// not depend on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Exclusive writer lock on a directory via an O_EXCL lock file.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace mshot
