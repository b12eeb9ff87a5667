#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

// Output-directory plumbing: atomic file writes and the append-only run manifest.

namespace aim::expcli {

namespace fs = std::filesystem;

/// Writes to a sibling temp file, then renames over `path`.
inline void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(read_text(path)); }

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// One JSON object per line. Entries are only ever appended, each with a single
/// O_APPEND write so concurrent workers do not interleave lines.
class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {}

  const fs::path& path() const { return path_; }

  void append(nlohmann::json entry) const {
    if (!entry.contains("time")) entry["time"] = utc_timestamp();
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    const std::string line = entry.dump() + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw std::runtime_error("cannot open manifest " + path_.string());
    const auto n = ::write(fd, line.data(), line.size());
    ::close(fd);
    if (n != static_cast<ssize_t>(line.size())) throw std::runtime_error("short write to manifest " + path_.string());
  }

  std::vector<nlohmann::json> entries() const {
    std::vector<nlohmann::json> out;
    std::ifstream in(path_);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
  }

  /// Entries whose `event` equals the given name.
  std::vector<nlohmann::json> events(const std::string& name) const {
    std::vector<nlohmann::json> out;
    for (auto& e : entries()) {
      if (e.value("event", "") == name) out.push_back(std::move(e));
    }
    return out;
  }

 private:
  fs::path path_;
};

}  // namespace aim::expcli
