#include "dtreg/audit_service.hpp"

#include <httplib.h>

#include <algorithm>
#include <ctime>

#include "dtreg/io.hpp"

namespace dtreg::audit {

namespace {

std::string utc_now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

AuditQueue::AuditQueue(std::vector<AuditTask> tasks, std::filesystem::path ledger,
                       std::chrono::seconds claim_timeout, Clock clock)
    : tasks_(std::move(tasks)),
      ledger_(std::move(ledger)),
      claim_timeout_(claim_timeout),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })) {
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (!index_.emplace(tasks_[i].task_id, i).second) {
      throw std::invalid_argument("duplicate task id " + tasks_[i].task_id);
    }
  }
  if (std::filesystem::exists(ledger_)) {
    for (const auto& row : io::read_jsonl(ledger_)) done_.insert(row.at("task_id").get<std::string>());
  }
}

std::optional<AuditTask> AuditQueue::claim_next(AuditStage stage, const std::string& reviewer) {
  std::lock_guard lock(mu_);
  const auto now = clock_();
  for (const auto& t : tasks_) {
    if (t.stage != stage || done_.count(t.task_id)) continue;
    const auto it = claims_.find(t.task_id);
    if (it != claims_.end() && now - it->second.at < claim_timeout_) continue;
    claims_[t.task_id] = {reviewer, now};
    return t;
  }
  return std::nullopt;
}

bool AuditQueue::release(const std::string& task_id) {
  std::lock_guard lock(mu_);
  return claims_.erase(task_id) > 0;
}

SubmitResult AuditQueue::submit(const std::string& task_id, const std::string& label,
                                const std::string& reviewer, const std::string& note) {
  std::lock_guard lock(mu_);
  const auto it = index_.find(task_id);
  if (it == index_.end()) return SubmitResult::UnknownTask;
  if (done_.count(task_id)) return SubmitResult::Duplicate;
  const auto& task = tasks_[it->second];
  const auto vocab = label_vocabulary(task.stage);
  if (std::find(vocab.begin(), vocab.end(), label) == vocab.end()) return SubmitResult::InvalidLabel;
  io::append_jsonl(ledger_, to_json(LabelRecord{task_id, std::string(to_string(task.stage)), label,
                                                utc_now_iso(), reviewer, note}));
  done_.insert(task_id);
  claims_.erase(task_id);
  return SubmitResult::Accepted;
}

json AuditQueue::progress() const {
  std::lock_guard lock(mu_);
  json out = json::object();
  for (const auto& t : tasks_) {
    auto& cell = out[std::string(to_string(t.stage))][t.stratum];
    if (cell.is_null()) cell = {{"done", 0}, {"total", 0}, {"remaining_weight", 0.0}};
    cell["total"] = cell["total"].get<int>() + 1;
    if (done_.count(t.task_id)) {
      cell["done"] = cell["done"].get<int>() + 1;
    } else {
      cell["remaining_weight"] = cell["remaining_weight"].get<double>() + t.weight;
    }
  }
  return out;
}

AuditServer::AuditServer(AuditQueue& queue) : queue_(queue), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

AuditServer::~AuditServer() { stop(); }

void AuditServer::install_routes() {
  auto send = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  server_->Get("/api/v1/stages", [send](const httplib::Request&, httplib::Response& res) {
    json out = json::object();
    for (auto s : {AuditStage::Relevance, AuditStage::Sector, AuditStage::Predictor, AuditStage::Rdc,
                   AuditStage::PairStatus}) {
      out[std::string(to_string(s))] = label_vocabulary(s);
    }
    send(res, 200, out);
  });

  server_->Get("/api/v1/tasks/next", [this, send](const httplib::Request& req, httplib::Response& res) {
    AuditStage stage;
    try {
      stage = audit_stage_from_string(req.get_param_value("stage"));
    } catch (const std::exception& e) {
      return send(res, 400, {{"error", e.what()}});
    }
    const auto reviewer = req.get_param_value("reviewer");
    if (reviewer.empty()) return send(res, 400, {{"error", "reviewer is required"}});
    const auto task = queue_.claim_next(stage, reviewer);
    if (!task) return send(res, 200, {{"done", true}});
    send(res, 200, {{"done", false}, {"task", to_json(*task)}, {"label_options", label_vocabulary(stage)}});
  });

  server_->Post(R"(/api/v1/tasks/(.+)/release)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, queue_.release(req.matches[1]) ? 200 : 404, {{"released", req.matches[1].str()}});
  });

  server_->Post("/api/v1/labels", [this, send](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
      const auto result = queue_.submit(body.at("task_id").get<std::string>(), body.at("label").get<std::string>(),
                                        body.at("reviewer_id").get<std::string>(), body.value("note", std::string()));
      switch (result) {
        case SubmitResult::Accepted: return send(res, 201, {{"ok", true}});
        case SubmitResult::Duplicate: return send(res, 409, {{"error", "task already labeled"}});
        case SubmitResult::UnknownTask: return send(res, 404, {{"error", "unknown task"}});
        case SubmitResult::InvalidLabel: return send(res, 422, {{"error", "label outside stage vocabulary"}});
      }
    } catch (const std::exception& e) {
      send(res, 400, {{"error", e.what()}});
    }
  });

  server_->Get("/api/v1/progress", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200, queue_.progress());
  });
}

int AuditServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind audit server to " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void AuditServer::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void AuditServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace dtreg::audit
