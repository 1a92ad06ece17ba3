#include "dtreg/cache.hpp"

#include "dtreg/error.hpp"
#include "dtreg/io.hpp"

namespace dtreg {

RunMode parse_run_mode(const std::string& s) {
  if (s == "live") return RunMode::Live;
  if (s == "replay") return RunMode::Replay;
  throw ConfigError("unknown mode '" + s + "' (expected live|replay)");
}

std::string to_string(RunMode m) { return m == RunMode::Live ? "live" : "replay"; }

ResponseCache::ResponseCache(std::filesystem::path dir, RunMode mode)
    : dir_(std::move(dir)), mode_(mode) {}

std::filesystem::path ResponseCache::path_for(const std::string& request_key) const {
  const std::string h = io::sha256_hex(request_key);
  return dir_ / h.substr(0, 2) / h;
}

std::optional<std::string> ResponseCache::lookup(const std::string& request_key) const {
  const auto p = path_for(request_key);
  if (!std::filesystem::exists(p)) return std::nullopt;
  return io::read_file(p);
}

void ResponseCache::store(const std::string& request_key, const std::string& body) const {
  io::write_file_atomic(path_for(request_key), body);
}

std::string ResponseCache::get_or_fetch(const std::string& request_key,
                                        const std::function<std::string()>& fetch) const {
  if (auto hit = lookup(request_key)) return *hit;
  if (mode_ == RunMode::Replay) throw CacheMiss(request_key);
  std::string body = fetch();
  store(request_key, body);
  return body;
}

}  // namespace dtreg
