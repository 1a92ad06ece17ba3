#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace dtreg {

enum class RunMode { Live, Replay };

RunMode parse_run_mode(const std::string& s);
std::string to_string(RunMode m);

// Content store for raw external responses. Each entry is one file named by
// the SHA-256 of its request key; the stored body is never rewritten. In
// replay mode a missing entry is a hard CacheMiss and `fetch` is never called.
class ResponseCache {
 public:
  ResponseCache(std::filesystem::path dir, RunMode mode);

  std::string get_or_fetch(const std::string& request_key,
                           const std::function<std::string()>& fetch) const;
  std::optional<std::string> lookup(const std::string& request_key) const;
  void store(const std::string& request_key, const std::string& body) const;

  std::filesystem::path path_for(const std::string& request_key) const;
  RunMode mode() const noexcept { return mode_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  RunMode mode_;
};

}  // namespace dtreg
