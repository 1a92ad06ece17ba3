#include "dtreg/model_client.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>

#include "dtreg/error.hpp"
#include "dtreg/io.hpp"

namespace dtreg {

namespace fs = std::filesystem;

namespace {

std::string substitute(std::string text, const std::map<std::string, std::string>& vars) {
  for (const auto& [key, value] : vars) {
    const std::string needle = "{" + key + "}";
    for (std::size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + value.size())) {
      text.replace(pos, needle.size(), value);
    }
  }
  return text;
}

std::string utc_now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string PromptTemplate::render_user(const std::map<std::string, std::string>& vars) const {
  return substitute(user, vars);
}

std::string PromptTemplate::render_system(const std::map<std::string, std::string>& vars) const {
  return substitute(system, vars);
}

PromptTemplate parse_prompt_file(const std::string& stem, const std::string& contents) {
  static constexpr std::string_view kSystem = "=== system ===\n";
  static constexpr std::string_view kUser = "=== user ===\n";
  const auto s = contents.find(kSystem);
  const auto u = contents.find(kUser);
  if (s != 0 || u == std::string::npos) {
    throw ConfigError("prompt file " + stem + " lacks system/user sections");
  }
  PromptTemplate p;
  const auto dash = stem.rfind("-v");
  if (dash == std::string::npos) throw ConfigError("prompt file name needs -vN suffix: " + stem);
  p.stage = stem.substr(0, dash);
  p.version = stem + "#" + io::sha256_hex(contents).substr(0, 12);
  p.system = contents.substr(kSystem.size(), u - kSystem.size());
  p.user = contents.substr(u + kUser.size());
  while (!p.system.empty() && p.system.back() == '\n') p.system.pop_back();
  while (!p.user.empty() && p.user.back() == '\n') p.user.pop_back();
  return p;
}

PromptRegistry::PromptRegistry(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("prompt directory not found: " + dir.string());
  std::map<std::string, int> best_version;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    const std::string stem = entry.path().stem().string();
    auto p = parse_prompt_file(stem, io::read_file(entry.path()));
    const int v = std::stoi(stem.substr(stem.rfind("-v") + 2));
    auto [it, inserted] = best_version.try_emplace(p.stage, v);
    if (inserted || v > it->second) {
      it->second = v;
      prompts_[p.stage] = std::move(p);
    }
  }
}

const PromptTemplate& PromptRegistry::get(const std::string& stage) const {
  const auto it = prompts_.find(stage);
  if (it == prompts_.end()) throw ConfigError("no prompt registered for stage " + stage);
  return it->second;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.version = j.value("version", c.version);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.requests_per_second = j.value("requests_per_second", c.requests_per_second);
  c.retry.max_attempts = j.value("max_attempts", c.retry.max_attempts);
  if (j.contains("api_key")) throw ConfigError("API keys are read from the environment only");
  return c;
}

ModelClient::ModelClient(ModelConfig config, const ResponseCache& cache)
    : config_(std::move(config)), cache_(cache), limiter_(config_.requests_per_second) {}

std::string ModelClient::cache_key(const std::string& stage, const std::string& prompt_version,
                                   const std::string& item_id) {
  return "model|" + stage + "|" + prompt_version + "|" + item_id;
}

json ModelClient::build_request(const ModelConfig& cfg, const std::string& system,
                                const std::string& user) {
  json messages = json::array();
  if (!system.empty()) messages.push_back({{"role", "system"}, {"content", system}});
  messages.push_back({{"role", "user"}, {"content", user}});
  return json{{"model", cfg.model}, {"temperature", 0}, {"messages", messages}};
}

ModelReply ModelClient::complete(const std::string& item_id, const PromptTemplate& prompt,
                                 const std::string& system, const std::string& user) {
  const std::string key = cache_key(prompt.stage, prompt.version, item_id);
  const std::string entry = cache_.get_or_fetch(key, [&] {
    const char* api_key = std::getenv(config_.api_key_env.c_str());
    if (!api_key || !*api_key) throw ConfigError("environment variable " + config_.api_key_env + " not set");
    if (config_.base_url.empty()) throw ConfigError("model.base_url not configured");
    const json request = build_request(config_, system, user);
    const auto res = http::with_retry(config_.retry, [&] {
      limiter_.acquire();
      return http::post_json(config_.base_url + "/chat/completions", request.dump(),
                             {{"Authorization", std::string("Bearer ") + api_key}});
    });
    if (res.status != 200) {
      throw DataIntegrityError("model endpoint returned HTTP " + std::to_string(res.status));
    }
    const json body = json::parse(res.body);
    const auto& content = body.at("choices").at(0).at("message").at("content");
    const gates::ModelMeta meta{config_.model, body.value("model", config_.version), utc_now_iso()};
    return json{{"key", {{"item_id", item_id}, {"stage", prompt.stage}, {"prompt_version", prompt.version}}},
                {"request", request},
                {"reply", content.is_string() ? content.get<std::string>() : content.dump()},
                {"model_meta", to_json(meta)}}
        .dump();
  });
  const json cached = json::parse(entry);
  return {cached.at("reply").get<std::string>(), gates::model_meta_from_json(cached.at("model_meta"))};
}

void store_cached_reply(const ResponseCache& cache, const std::string& item_id,
                        const PromptTemplate& prompt, const std::string& reply,
                        const gates::ModelMeta& meta, const json& request) {
  const json entry{{"key", {{"item_id", item_id}, {"stage", prompt.stage}, {"prompt_version", prompt.version}}},
                   {"request", request},
                   {"reply", reply},
                   {"model_meta", to_json(meta)}};
  cache.store(ModelClient::cache_key(prompt.stage, prompt.version, item_id), entry.dump());
}

}  // namespace dtreg
