#include "mshot/io.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

namespace mshot {

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

void append_f32le(std::string& out, const float* data, std::size_t n) {
  const std::size_t start = out.size();
  out.resize(start + 4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(data[i]));
    std::memcpy(&out[start + 4 * i], &le, 4);
  }
}

void read_f32le(const char* src, float* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t le;
    std::memcpy(&le, src + 4 * i, 4);
    dst[i] = std::bit_cast<float>(to_le(le));
  }
}

void append_matrix(std::string& out, const MatF& m) {
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  append_f32le(out, rm.data(), static_cast<std::size_t>(rm.size()));
}

MatF read_matrix(const char* src, Eigen::Index rows, Eigen::Index cols) {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  read_f32le(src, rm.data(), static_cast<std::size_t>(rm.size()));
  return rm;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::error_code ec;
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

std::string fnv1a_hex(const std::string& bytes) {
  const std::uint64_t h = hash_tag(bytes);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n, threads > 0 ? threads : 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

DirLock::DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw IoError("directory is locked by another writer: " + dir.string());
  ::close(fd);
}

DirLock::~DirLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace mshot
