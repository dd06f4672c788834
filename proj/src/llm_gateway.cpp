#include "kgqa/llm_gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace kgqa {

const char* skill_name(SkillKind kind) {
    switch (kind) {
        case SkillKind::relation_filter: return "relation-filter";
        case SkillKind::relation_multi: return "relation-multi";
        case SkillKind::entity_filter: return "entity-filter";
        case SkillKind::path_predict: return "path-predict";
        case SkillKind::entity_identify: return "entity-identify";
        case SkillKind::predicate_identify: return "predicate-identify";
        case SkillKind::sparql_generate: return "sparql-generate";
    }
    return "unknown";
}

std::optional<SkillKind> skill_from_name(std::string_view name) {
    for (SkillKind kind :
         {SkillKind::relation_filter, SkillKind::relation_multi, SkillKind::entity_filter,
          SkillKind::path_predict, SkillKind::entity_identify, SkillKind::predicate_identify,
          SkillKind::sparql_generate})
        if (name == skill_name(kind)) return kind;
    return std::nullopt;
}

std::size_t estimate_tokens(std::string_view text) {
    return (text.size() + 3) / 4;
}

namespace {

// strips "1.", "2)", "-", "*" prefixes and surrounding quotes
std::string strip_item_decorations(std::string_view line) {
    auto s = trim_view(line);
    std::size_t i = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
        s = trim_view(s.substr(i + 1));
    } else if (!s.empty() && (s.front() == '-' || s.front() == '*')) {
        s = trim_view(s.substr(1));
    }
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\'')))
        s = s.substr(1, s.size() - 2);
    return trim(s);
}

std::string strip_answer_label(std::string_view line) {
    auto s = trim_view(line);
    for (std::string_view label : {"answers:", "answer:"})
        if (starts_with_icase(s, label)) return trim(s.substr(label.size()));
    return std::string(s);
}

}  // namespace

std::string extract_sparql_block(const std::string& raw_text) {
    auto fence = raw_text.find("```");
    if (fence != std::string::npos) {
        auto body_start = raw_text.find('\n', fence);
        auto fence_end = raw_text.find("```", fence + 3);
        if (body_start != std::string::npos && fence_end != std::string::npos &&
            body_start < fence_end)
            return trim(std::string_view(raw_text).substr(body_start + 1, fence_end - body_start - 1));
    }
    std::string lower = to_lower(raw_text);
    std::size_t best = std::string::npos;
    for (std::string_view kw : {"prefix", "select", "ask"}) {
        auto pos = lower.find(kw);
        if (pos != std::string::npos) best = std::min(best, pos);
    }
    if (best == std::string::npos) return "";
    return trim(std::string_view(raw_text).substr(best));
}

std::vector<std::string> parse_items(SkillKind kind, const std::string& raw_text) {
    if (kind == SkillKind::sparql_generate) {
        auto block = extract_sparql_block(raw_text);
        if (block.empty()) return {};
        return {block};
    }

    std::vector<std::string> items;
    auto push = [&](std::string_view piece) {
        std::string item = strip_item_decorations(piece);
        if (!item.empty()) items.push_back(std::move(item));
    };

    auto lines = split(raw_text, '\n');
    for (const auto& line : lines) {
        std::string content = strip_answer_label(line);
        if (content.empty()) continue;
        if (content.find('|') != std::string::npos) {
            for (const auto& piece : split(content, '|')) push(piece);
        } else if (lines.size() == 1 && content.find(',') != std::string::npos) {
            for (const auto& piece : split(content, ',')) push(piece);
        } else {
            push(content);
        }
    }
    return items;
}

bool is_continue_sentinel(std::string_view raw_text) {
    std::string norm = normalize_label(raw_text);
    if (norm.empty()) return true;
    if (norm == "continue" || norm == "no" || norm == "no answer") return true;
    for (std::string_view prefix : {"none", "continue", "no suitable", "no answer"})
        if (norm.rfind(prefix, 0) == 0) return true;
    return false;
}

PromptTemplates::PromptTemplates() {
    instructions_[SkillKind::relation_filter] =
        "You select graph relations. From the candidate relations listed in the context, "
        "pick the {k} relation(s) most likely to lead to the answer. Reply with one relation "
        "label per line, exactly as written in the context.";
    instructions_[SkillKind::relation_multi] =
        "You select graph relations. From the candidate relations listed in the context, "
        "list every relation that could lead to the answer, one per line, exactly as written "
        "in the context.";
    instructions_[SkillKind::entity_filter] =
        "You check candidate answers. The context lists candidate entities. If any of them "
        "answer the question, reply with 'answer:' followed by the matching entities "
        "separated by ' | '. If none of them can be the answer, reply 'continue'.";
    instructions_[SkillKind::path_predict] =
        "You choose a query path. The context lists the allowed path types. Reply with the "
        "single path type that answers the question, exactly as written.";
    instructions_[SkillKind::entity_identify] =
        "You identify entities. The context lists candidate entity ids with descriptions. "
        "Reply with the {k} id(s) relevant to the question, one per line.";
    instructions_[SkillKind::predicate_identify] =
        "You identify predicates. The context lists candidate predicate ids with "
        "descriptions. Reply with the {k} id(s) relevant to the question, one per line.";
    instructions_[SkillKind::sparql_generate] =
        "You write SPARQL. Using the entities and predicates in the context, write one "
        "SPARQL query that answers the question. Reply with only the query.";
}

const std::string& PromptTemplates::instruction(SkillKind kind) const {
    auto it = instructions_.find(kind);
    if (it == instructions_.end())
        throw ConfigError(std::string("no prompt template for skill ") + skill_name(kind));
    return it->second;
}

void PromptTemplates::set_instruction(SkillKind kind, std::string text) {
    instructions_[kind] = std::move(text);
}

std::string ScriptedBackend::request_key(const SkillRequest& request) {
    std::vector<std::string> ids;
    ids.reserve(request.context_items.size());
    for (const auto& item : request.context_items) ids.push_back(item.id);
    std::sort(ids.begin(), ids.end());
    return std::string(skill_name(request.kind)) + "|" + request.question + "|" + join(ids, ",");
}

std::string ScriptedBackend::fallback_key(const SkillRequest& request) {
    return std::string(skill_name(request.kind)) + "|" + request.question;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read scripted backend fixture: " + path);
    auto json = nlohmann::json::parse(in, nullptr, false);
    if (json.is_discarded()) throw DataError("scripted backend fixture is not valid JSON: " + path);
    if (json.contains("responses")) json = json["responses"];
    if (!json.is_object()) throw DataError("scripted backend fixture must be a JSON object: " + path);

    auto backend = std::make_shared<ScriptedBackend>();
    for (auto& [key, value] : json.items()) {
        if (value.is_string()) {
            backend->add_response(key, value.get<std::string>());
        } else if (value.is_array()) {
            std::vector<std::string> seq;
            for (auto& v : value) seq.push_back(v.get<std::string>());
            backend->add_sequence(key, std::move(seq));
        } else {
            throw DataError("scripted response for '" + key + "' must be string or array");
        }
    }
    return backend;
}

void ScriptedBackend::add_response(std::string key, std::string response) {
    add_sequence(std::move(key), {std::move(response)});
}

void ScriptedBackend::add_sequence(std::string key, std::vector<std::string> responses) {
    if (responses.empty()) throw ConfigError("scripted sequence must not be empty");
    std::lock_guard lock(mutex_);
    entries_[std::move(key)] = Entry{std::move(responses), 0};
}

std::string ScriptedBackend::complete(const SkillRequest& request, const Prompt&,
                                      const CompletionParams&) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(request_key(request));
    if (it == entries_.end()) it = entries_.find(fallback_key(request));
    if (it == entries_.end())
        throw BackendError("no scripted response for key '" + request_key(request) + "'",
                           /*retryable=*/false);
    Entry& entry = it->second;
    const std::string& response = entry.responses[std::min(entry.next, entry.responses.size() - 1)];
    ++entry.next;
    return response;
}

std::string HttpChatBackend::complete(const SkillRequest&, const Prompt& prompt,
                                      const CompletionParams& params) {
    httplib::Client client(base_url_);
    client.set_read_timeout(params.timeout_seconds, 0);
    client.set_connection_timeout(params.timeout_seconds, 0);

    httplib::Headers headers;
    if (const char* token = std::getenv(token_env_var_.c_str()); token && *token)
        headers.emplace("Authorization", std::string("Bearer ") + token);

    nlohmann::json body{{"system", prompt.system},
                        {"user", prompt.user},
                        {"temperature", params.temperature},
                        {"max_output_tokens", params.max_output_tokens}};
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw BackendError("chat endpoint unreachable: " + base_url_, /*retryable=*/true);
    if (res->status != 200)
        throw BackendError("chat endpoint returned " + std::to_string(res->status) + ": " + res->body,
                           /*retryable=*/res->status >= 500);
    auto json = nlohmann::json::parse(res->body, nullptr, false);
    if (json.is_discarded() || !json.contains("text") || !json["text"].is_string())
        throw BackendError("chat endpoint returned malformed body", /*retryable=*/false);
    return json["text"].get<std::string>();
}

LlmGateway::LlmGateway(std::shared_ptr<ChatBackend> backend, GatewayConfig config,
                       PromptTemplates templates)
    : backend_(std::move(backend)), config_(config), templates_(std::move(templates)) {
    if (!backend_) throw ConfigError("gateway requires a backend");
    if (config_.max_concurrency < 1) throw ConfigError("max_concurrency must be >= 1");
}

Prompt LlmGateway::render(const SkillRequest& request) const {
    Prompt prompt;
    prompt.system = templates_.instruction(request.kind);
    auto pos = prompt.system.find("{k}");
    if (pos != std::string::npos)
        prompt.system.replace(pos, 3, std::to_string(request.k));

    std::string& user = prompt.user;
    if (!request.context_items.empty()) {
        user += "Context:\n";
        for (const auto& item : request.context_items) {
            if (item.id == item.text)
                user += "- " + item.text + "\n";
            else
                user += "[" + item.id + "] " + item.text + "\n";
        }
        user += "\n";
    }
    if (!request.few_shot.empty()) {
        user += "Examples:\n";
        for (const auto& ex : request.few_shot)
            user += "Q: " + ex.question + "\nA: " + ex.solution + "\n";
        user += "\n";
    }
    if (!request.feedback.empty()) {
        user += "Feedback:\n";
        for (const auto& msg : request.feedback) user += "- " + msg + "\n";
        user += "\n";
    }
    user += "Question: " + request.question;
    return prompt;
}

SkillResponse LlmGateway::complete(const SkillRequest& request) const {
    Prompt prompt = render(request);
    std::size_t prompt_tokens = estimate_tokens(prompt.full());
    if (prompt_tokens > config_.context_window)
        throw BudgetError("prompt of " + std::to_string(prompt_tokens) +
                              " estimated tokens exceeds window of " +
                              std::to_string(config_.context_window),
                          prompt_tokens - config_.context_window);

    CompletionParams params{config_.temperature, config_.max_output_tokens,
                            config_.timeout_seconds};

    {
        std::unique_lock lock(slots_mutex_);
        slots_cv_.wait(lock, [&] { return in_flight_ < config_.max_concurrency; });
        ++in_flight_;
    }
    std::string raw;
    try {
        calls_.fetch_add(1);
        raw = backend_->complete(request, prompt, params);
    } catch (...) {
        {
            std::lock_guard lock(slots_mutex_);
            --in_flight_;
        }
        slots_cv_.notify_one();
        throw;
    }
    {
        std::lock_guard lock(slots_mutex_);
        --in_flight_;
    }
    slots_cv_.notify_one();

    SkillResponse response;
    response.raw_text = raw;
    response.parsed_items = parse_items(request.kind, raw);
    response.usage = {prompt_tokens, estimate_tokens(raw)};
    return response;
}

}  // namespace kgqa
