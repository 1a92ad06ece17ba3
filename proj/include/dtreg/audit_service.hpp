#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dtreg/audit.hpp"

namespace httplib {
class Server;
}

namespace dtreg::audit {

enum class SubmitResult { Accepted, Duplicate, UnknownTask, InvalidLabel };

// Single-writer task queue. A claimed task is not re-served until it is
// labeled, released, or its claim expires.
class AuditQueue {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  AuditQueue(std::vector<AuditTask> tasks, std::filesystem::path ledger,
             std::chrono::seconds claim_timeout = std::chrono::minutes(30), Clock clock = {});

  std::optional<AuditTask> claim_next(AuditStage stage, const std::string& reviewer);
  bool release(const std::string& task_id);
  SubmitResult submit(const std::string& task_id, const std::string& label,
                      const std::string& reviewer, const std::string& note = {});
  json progress() const;

  const std::filesystem::path& ledger() const noexcept { return ledger_; }

 private:
  struct Claim {
    std::string reviewer;
    std::chrono::steady_clock::time_point at;
  };

  mutable std::mutex mu_;
  std::vector<AuditTask> tasks_;
  std::map<std::string, std::size_t> index_;
  std::set<std::string> done_;
  std::map<std::string, Claim> claims_;
  std::filesystem::path ledger_;
  std::chrono::seconds claim_timeout_;
  Clock clock_;
};

// JSON endpoints under /api/v1/ consumed by the labeling console.
class AuditServer {
 public:
  explicit AuditServer(AuditQueue& queue);
  ~AuditServer();
  AuditServer(const AuditServer&) = delete;
  AuditServer& operator=(const AuditServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  void install_routes();

  AuditQueue& queue_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace dtreg::audit
