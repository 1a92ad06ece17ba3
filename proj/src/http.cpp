#include "dtreg/http.hpp"

#include <httplib.h>

#include <thread>

#include "dtreg/error.hpp"

namespace dtreg::http {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL without scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

httplib::Headers to_httplib(const Headers& h) { return httplib::Headers(h.begin(), h.end()); }

}  // namespace

Response get(const std::string& url, const Headers& headers, std::chrono::seconds timeout) {
  const auto parts = split_url(url);
  httplib::Client cli(parts.origin);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_follow_location(true);
  auto res = cli.Get(parts.path, to_httplib(headers));
  if (!res) throw TransientError("GET " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

Response post_json(const std::string& url, const std::string& body, const Headers& headers,
                   std::chrono::seconds timeout) {
  const auto parts = split_url(url);
  httplib::Client cli(parts.origin);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  auto res = cli.Post(parts.path, to_httplib(headers), body, "application/json");
  if (!res) throw TransientError("POST " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

std::string url_encode(const std::string& s) { return httplib::detail::encode_query_param(s); }

RateLimiter::RateLimiter(double requests_per_second)
    : interval_(requests_per_second > 0
                    ? std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                          std::chrono::duration<double>(1.0 / requests_per_second))
                    : std::chrono::steady_clock::duration::zero()),
      next_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + interval_;
  }
  std::this_thread::sleep_until(slot);
}

Response with_retry(const RetryPolicy& policy, const std::function<Response()>& call) {
  auto backoff = policy.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    try {
      Response r = call();
      if (!is_retryable_status(r.status)) return r;
      last_error = "HTTP " + std::to_string(r.status);
    } catch (const TransientError& e) {
      last_error = e.what();
    }
    if (attempt < policy.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
  }
  throw TransientError("retry budget exhausted after " + std::to_string(policy.max_attempts) +
                       " attempts: " + last_error);
}

}  // namespace dtreg::http
