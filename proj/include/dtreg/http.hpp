#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <string>

namespace dtreg::http {

struct Response {
  int status = 0;
  std::string body;
};

using Headers = std::multimap<std::string, std::string>;

// Blocking requests over cpp-httplib. Transport failures surface as
// dtreg::TransientError; HTTP status codes are returned as-is.
Response get(const std::string& url, const Headers& headers = {},
             std::chrono::seconds timeout = std::chrono::seconds(30));
Response post_json(const std::string& url, const std::string& body, const Headers& headers = {},
                   std::chrono::seconds timeout = std::chrono::seconds(120));

std::string url_encode(const std::string& s);

inline bool is_retryable_status(int status) { return status == 429 || status >= 500; }

// Spaces calls at a fixed requests-per-second budget. Thread-safe.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_second);
  void acquire();

 private:
  std::mutex mu_;
  std::chrono::steady_clock::duration interval_;
  std::chrono::steady_clock::time_point next_;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

// Runs `call` until it returns a non-retryable response or the attempt budget
// is exhausted; throws TransientError on exhaustion.
Response with_retry(const RetryPolicy& policy, const std::function<Response()>& call);

}  // namespace dtreg::http
