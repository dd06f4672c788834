#pragma once

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

enum class SkillKind {
    relation_filter,
    relation_multi,
    entity_filter,
    path_predict,
    entity_identify,
    predicate_identify,
    sparql_generate,
};

const char* skill_name(SkillKind kind);
std::optional<SkillKind> skill_from_name(std::string_view name);

struct FewShotExample {
    std::string question;
    std::string solution;  // answer list, query path, or SPARQL, per skill
    std::string source_id;
};

struct ContextItem {
    std::string id;
    std::string text;
};

// One typed LLM call.
struct SkillRequest {
    SkillKind kind = SkillKind::relation_filter;
    std::string question;
    std::vector<ContextItem> context_items;
    std::vector<FewShotExample> few_shot;
    std::vector<std::string> feedback;
    int k = 1;
};

struct TokenUsage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct SkillResponse {
    std::string raw_text;
    std::vector<std::string> parsed_items;
    TokenUsage usage;
};

struct Prompt {
    std::string system;
    std::string user;

    std::string full() const { return system + "\n\n" + user; }
};

// ceil(bytes / 4); monotone in text length
std::size_t estimate_tokens(std::string_view text);

// Split free-form LLM output into items for the given skill. Items are
// substrings of the raw text; the sparql skill yields the first fenced or
// SELECT/ASK/PREFIX-prefixed block as a single item.
std::vector<std::string> parse_items(SkillKind kind, const std::string& raw_text);

std::string extract_sparql_block(const std::string& raw_text);

// "continue" / "none of these" style replies from the entity-filter skill
bool is_continue_sentinel(std::string_view raw_text);

// Per-skill instruction texts. "{k}" expands to the requested item count.
class PromptTemplates {
public:
    PromptTemplates();  // built-in defaults for every skill
    const std::string& instruction(SkillKind kind) const;  // ConfigError if absent
    void set_instruction(SkillKind kind, std::string text);

private:
    std::map<SkillKind, std::string> instructions_;
};

struct CompletionParams {
    double temperature = 0.0;
    int max_output_tokens = 512;
    int timeout_seconds = 60;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    // raw completion text; throws BackendError on transport failure
    virtual std::string complete(const SkillRequest& request, const Prompt& prompt,
                                 const CompletionParams& params) = 0;
};

// Deterministic fixture backend. Responses are keyed by
// "<skill>|<question>|<sorted context ids joined by ,>"; a bare
// "<skill>|<question>" key acts as a fallback. A key may map to a list of
// responses consumed in order (the last one repeats).
class ScriptedBackend : public ChatBackend {
public:
    ScriptedBackend() = default;
    static std::shared_ptr<ScriptedBackend> from_file(const std::string& path);

    static std::string request_key(const SkillRequest& request);
    static std::string fallback_key(const SkillRequest& request);

    void add_response(std::string key, std::string response);
    void add_sequence(std::string key, std::vector<std::string> responses);

    std::string complete(const SkillRequest& request, const Prompt& prompt,
                         const CompletionParams& params) override;

private:
    struct Entry {
        std::vector<std::string> responses;
        std::size_t next = 0;
    };
    std::mutex mutex_;
    std::map<std::string, Entry> entries_;
};

// Remote chat-completion endpoint:
//   POST {"system","user","temperature","max_output_tokens"} -> {"text": ...}
// Auth token read from the named environment variable, sent as a Bearer header.
class HttpChatBackend : public ChatBackend {
public:
    HttpChatBackend(std::string base_url, std::string path,
                    std::string token_env_var = "KGQA_LLM_TOKEN")
        : base_url_(std::move(base_url)), path_(std::move(path)),
          token_env_var_(std::move(token_env_var)) {}

    std::string complete(const SkillRequest& request, const Prompt& prompt,
                         const CompletionParams& params) override;

private:
    std::string base_url_;
    std::string path_;
    std::string token_env_var_;
};

struct GatewayConfig {
    std::size_t context_window = 4096;  // estimated tokens
    double temperature = 0.0;
    int max_output_tokens = 512;
    int timeout_seconds = 60;
    int max_concurrency = 8;
};

// Stateless per call; requests over budget are rejected before any backend
// invocation. In-flight calls are capped at max_concurrency.
class LlmGateway {
public:
    explicit LlmGateway(std::shared_ptr<ChatBackend> backend, GatewayConfig config = {},
                        PromptTemplates templates = {});

    // sections in fixed order: instruction, context, examples, feedback, question
    Prompt render(const SkillRequest& request) const;

    SkillResponse complete(const SkillRequest& request) const;

    const GatewayConfig& config() const { return config_; }
    std::size_t backend_calls() const { return calls_.load(); }

private:
    std::shared_ptr<ChatBackend> backend_;
    GatewayConfig config_;
    PromptTemplates templates_;
    mutable std::atomic<std::size_t> calls_{0};
    mutable std::mutex slots_mutex_;
    mutable std::condition_variable slots_cv_;
    mutable int in_flight_ = 0;
};

}  // namespace kgqa
