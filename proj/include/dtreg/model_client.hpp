#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "dtreg/cache.hpp"
#include "dtreg/gates.hpp"
#include "dtreg/http.hpp"

namespace dtreg {

using nlohmann::json;

struct PromptTemplate {
  std::string stage;
  std::string version;  // "<stem>#<sha256 prefix>", changes whenever the text does
  std::string system;
  std::string user;

  // Substitutes `{key}` placeholders that appear in `vars`; other braces are left alone.
  std::string render_user(const std::map<std::string, std::string>& vars) const;
  std::string render_system(const std::map<std::string, std::string>& vars) const;
};

// Loads `<stage>-v<N>.txt` files with "=== system ===" / "=== user ===" sections.
class PromptRegistry {
 public:
  explicit PromptRegistry(const std::filesystem::path& dir);

  const PromptTemplate& get(const std::string& stage) const;
  const std::map<std::string, PromptTemplate>& all() const noexcept { return prompts_; }

 private:
  std::map<std::string, PromptTemplate> prompts_;  // latest version per stage
};

PromptTemplate parse_prompt_file(const std::string& stem, const std::string& contents);

struct ModelConfig {
  std::string base_url;  // OpenAI-compatible, e.g. https://host/v1
  std::string model = "gpt-4.1";
  std::string version = "2025-04-14";
  std::string api_key_env = "DTREG_API_KEY";
  double requests_per_second = 2.0;
  http::RetryPolicy retry;
};

ModelConfig model_config_from_json(const json& j);

struct ModelReply {
  std::string text;
  gates::ModelMeta meta;
};

// Single chat completion per item at temperature 0. Every exchange is cached
// as one file per (item, stage, prompt version) holding request and verbatim reply.
class ModelClient {
 public:
  ModelClient(ModelConfig config, const ResponseCache& cache);

  ModelReply complete(const std::string& item_id, const PromptTemplate& prompt,
                      const std::string& system, const std::string& user);

  static std::string cache_key(const std::string& stage, const std::string& prompt_version,
                               const std::string& item_id);
  static json build_request(const ModelConfig& cfg, const std::string& system,
                            const std::string& user);

 private:
  ModelConfig config_;
  const ResponseCache& cache_;
  http::RateLimiter limiter_;
};

// Writes a cache entry in the same layout `ModelClient` reads; used to seed
// replay caches from released model outputs.
void store_cached_reply(const ResponseCache& cache, const std::string& item_id,
                        const PromptTemplate& prompt, const std::string& reply,
                        const gates::ModelMeta& meta, const json& request = json::object());

}  // namespace dtreg
