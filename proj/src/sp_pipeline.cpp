#include "kgqa/sp_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace kgqa {

const char* term_kind_name(TermKind kind) {
    return kind == TermKind::entity ? "entity" : "predicate";
}

const TermEntry* TermCatalog::find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return nullptr;
    return &entries_[it->second];
}

void TermCatalog::add(std::string id, std::string description, bool fetched) {
    auto it = by_id_.find(id);
    if (it != by_id_.end()) {
        entries_[it->second].description = std::move(description);
        entries_[it->second].fetched = fetched;
        return;
    }
    by_id_.emplace(id, entries_.size());
    entries_.push_back({std::move(id), std::move(description), fetched});
}

TermCatalog TermCatalog::load_cache(const std::string& path, TermKind kind) {
    TermCatalog catalog(kind);
    std::ifstream in(path);
    if (!in) return catalog;  // a missing cache is just empty
    std::string line;
    while (std::getline(in, line)) {
        if (trim_view(line).empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() != 3) continue;
        if (cols[1] != term_kind_name(kind)) continue;
        catalog.add(cols[0], tsv_unescape(cols[2]));
    }
    return catalog;
}

namespace {

struct SplitUrl {
    std::string base;  // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("url needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::string replace_placeholder(const std::string& tmpl, const std::string& id) {
    auto pos = tmpl.find("{id}");
    if (pos == std::string::npos) throw ConfigError("url template needs an {id} placeholder");
    return tmpl.substr(0, pos) + id + tmpl.substr(pos + 4);
}

// Accepts {"description": ...}, Wikidata EntityData shape, or plain text.
std::string description_from_body(const std::string& id, const std::string& body) {
    auto json = nlohmann::json::parse(body, nullptr, false);
    if (json.is_discarded()) return trim(body);
    if (json.contains("description") && json["description"].is_string())
        return json["description"].get<std::string>();
    if (json.contains("entities") && json["entities"].contains(id)) {
        const auto& entity = json["entities"][id];
        std::string label, description;
        if (entity.contains("labels") && entity["labels"].contains("en"))
            label = entity["labels"]["en"].value("value", "");
        if (entity.contains("descriptions") && entity["descriptions"].contains("en"))
            description = entity["descriptions"]["en"].value("value", "");
        if (!label.empty() && !description.empty()) return label + ": " + description;
        if (!description.empty()) return description;
        if (!label.empty()) return label;
    }
    return trim(body);
}

}  // namespace

TermCatalog fetch_descriptions(const std::vector<std::string>& ids, TermKind kind,
                               const std::string& url_template, const std::string& cache_path,
                               int max_parallel, FetchStats* stats) {
    if (ids.empty()) throw DataError("fetch_descriptions requires at least one id");
    TermCatalog catalog = TermCatalog::load_cache(cache_path, kind);

    std::vector<std::string> missing;
    for (const auto& id : ids) {
        if (catalog.find(id)) {
            if (stats) ++stats->cached;
        } else {
            missing.push_back(id);
        }
    }
    if (missing.empty()) return catalog;

    struct Fetched {
        std::string id;
        std::string description;
        bool ok;
    };
    std::vector<Fetched> results(missing.size());
    std::atomic<std::size_t> cursor{0};

    auto worker = [&] {
        while (true) {
            std::size_t i = cursor.fetch_add(1);
            if (i >= missing.size()) break;
            const std::string& id = missing[i];
            results[i].id = id;
            try {
                auto url = split_url(replace_placeholder(url_template, id));
                httplib::Client client(url.base);
                client.set_read_timeout(30, 0);
                auto res = client.Get(url.path);
                if (res && res->status == 200) {
                    results[i].description = description_from_body(id, res->body);
                    results[i].ok = true;
                } else {
                    results[i].ok = false;
                }
            } catch (const std::exception&) {
                results[i].ok = false;
            }
        }
    };

    int workers = std::max(1, std::min<int>(max_parallel, static_cast<int>(missing.size())));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ofstream cache(cache_path, std::ios::app);
    for (const auto& r : results) {
        if (r.ok) {
            catalog.add(r.id, r.description, true);
            if (cache)
                cache << r.id << '\t' << term_kind_name(kind) << '\t' << tsv_escape(r.description)
                      << '\n';
            if (stats) ++stats->fetched;
        } else {
            catalog.add(r.id, "", false);
            if (stats) ++stats->failed;
        }
    }
    return catalog;
}

namespace {

std::unique_ptr<EmbeddingIndex> index_catalog(const TermCatalog& catalog,
                                              const std::shared_ptr<const Embedder>& embedder) {
    auto index = std::make_unique<EmbeddingIndex>(embedder);
    for (const auto& entry : catalog.entries()) {
        std::string doc = entry.id;
        if (!entry.description.empty()) doc += ": " + entry.description;
        index->add(entry.id, doc);
    }
    return index;
}

}  // namespace

SpPipeline::SpPipeline(std::shared_ptr<LlmGateway> gateway, std::shared_ptr<SparqlEndpoint> endpoint,
                       TermCatalog entity_catalog, TermCatalog predicate_catalog, SpConfig config,
                       std::shared_ptr<const FewShotStore> few_shot,
                       std::shared_ptr<const Embedder> embedder)
    : gateway_(std::move(gateway)), endpoint_(std::move(endpoint)),
      entities_(std::move(entity_catalog)), predicates_(std::move(predicate_catalog)),
      config_(config), few_shot_(std::move(few_shot)), embedder_(std::move(embedder)) {
    if (!gateway_) throw ConfigError("sp pipeline requires a gateway");
    if (!endpoint_) throw ConfigError("sp pipeline requires a SPARQL endpoint");
    if (entities_.kind() != TermKind::entity || predicates_.kind() != TermKind::predicate)
        throw ConfigError("catalog kinds are swapped");
    if (!embedder_) embedder_ = std::make_shared<HashEmbedder>(64, 1);
    if (entities_.size() > 0) entity_index_ = index_catalog(entities_, embedder_);
    if (predicates_.size() > 0) predicate_index_ = index_catalog(predicates_, embedder_);
}

std::vector<std::string> SpPipeline::identify_terms(SkillKind kind, const std::string& question,
                                                    const TermCatalog& catalog,
                                                    const EmbeddingIndex& index, int k,
                                                    RunContext& ctx) const {
    // offered candidates: top-k retrieved chunks (whole catalog when k covers it)
    std::vector<std::string> offered;
    std::set<std::string> offered_set;
    if (static_cast<std::size_t>(k) >= catalog.size()) {
        for (const auto& entry : catalog.entries()) {
            offered.push_back(entry.id);
            offered_set.insert(entry.id);
        }
    } else {
        auto top = index.top_k(question, static_cast<std::size_t>(k));
        for (const auto& scored : top.items) {
            const auto& id = index.chunk(scored.chunk_id).source_id;
            if (offered_set.insert(id).second) offered.push_back(id);
        }
    }

    SkillRequest request;
    request.kind = kind;
    request.question = question;
    request.k = k;
    for (const auto& id : offered) {
        const TermEntry* entry = catalog.find(id);
        std::string text = id;
        if (entry && !entry->description.empty()) text += ": " + entry->description;
        request.context_items.push_back({id, std::move(text)});
    }

    std::vector<std::string> feedback;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (!ctx.budget_left()) {
            ctx.trace.push_back({ctx.step, skill_name(kind), "", {}, attempt, "call-budget"});
            return {};
        }
        request.feedback = feedback;
        if ((config_.always_few_shot || ctx.validation_failed) && few_shot_)
            request.few_shot = few_shot_->examples_for(question, config_.few_shot_n);

        SkillResponse response;
        try {
            response = gateway_->complete(request);
            ++ctx.llm_calls;
        } catch (const BackendError&) {
            ctx.trace.push_back(
                {ctx.step, skill_name(kind), "", {}, attempt, "backend-failure"});
            return {};
        }

        std::string digest = digest_of(ScriptedBackend::request_key(request));
        std::vector<std::string> selected;
        std::vector<std::string> dropped;
        for (const auto& item : response.parsed_items) {
            // closed-world: selections must come from the offered set
            std::string id;
            if (offered_set.count(item)) {
                id = item;
            } else {
                for (const auto& candidate : offered)
                    if (normalize_label(candidate) == normalize_label(item)) {
                        id = candidate;
                        break;
                    }
            }
            if (id.empty()) {
                dropped.push_back(item);
            } else if (std::find(selected.begin(), selected.end(), id) == selected.end()) {
                selected.push_back(id);
            }
        }
        ctx.trace.push_back(
            {ctx.step, skill_name(kind), digest, response.parsed_items, attempt, ""});

        if (!selected.empty()) return selected;
        ctx.validation_failed = true;
        std::string offender = dropped.empty() ? response.raw_text : dropped.front();
        feedback.push_back("'" + offender + "' is not among the retrieved candidates; pick only " +
                           "from the listed ids");
    }
    return {};
}

std::vector<std::string> SpPipeline::identify_entities(const std::string& question,
                                                       RunContext& ctx) const {
    if (config_.known_entities.has_value()) {
        ctx.trace.push_back({ctx.step, skill_name(SkillKind::entity_identify), "",
                             *config_.known_entities, 0, "known-entities"});
        return *config_.known_entities;
    }
    if (!entity_index_) {
        if (config_.dialect == SparqlDialect::kqapro_literal) return {};
        throw ConfigError("entity catalog is empty and entities are not known");
    }
    return identify_terms(SkillKind::entity_identify, question, entities_, *entity_index_,
                          config_.k_entities, ctx);
}

std::vector<std::string> SpPipeline::identify_predicates(const std::string& question,
                                                         RunContext& ctx) const {
    if (!predicate_index_) {
        if (config_.dialect == SparqlDialect::kqapro_literal) return {};
        throw ConfigError("predicate catalog is empty");
    }
    return identify_terms(SkillKind::predicate_identify, question, predicates_, *predicate_index_,
                          config_.k_predicates, ctx);
}

std::optional<SparqlQuery> SpPipeline::generate_sparql(
    const std::string& question, const std::vector<std::string>& entities,
    const std::vector<std::string>& predicates, const std::vector<std::string>& execution_feedback,
    RunContext& ctx) const {
    if (entities.empty() && predicates.empty() && config_.dialect != SparqlDialect::kqapro_literal)
        throw DataError("generate_sparql requires entities or predicates for this dialect");

    SkillRequest request;
    request.kind = SkillKind::sparql_generate;
    request.question = question;
    request.k = 1;
    for (const auto& id : entities) {
        const TermEntry* entry = entities_.find(id);
        std::string text = "entity " + id;
        if (entry && !entry->description.empty()) text += ": " + entry->description;
        request.context_items.push_back({id, std::move(text)});
    }
    for (const auto& id : predicates) {
        const TermEntry* entry = predicates_.find(id);
        std::string text = "predicate " + id;
        if (entry && !entry->description.empty()) text += ": " + entry->description;
        request.context_items.push_back({id, std::move(text)});
    }

    std::vector<std::string> feedback = execution_feedback;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (!ctx.budget_left()) {
            ctx.trace.push_back({ctx.step, skill_name(request.kind), "", {}, attempt, "call-budget"});
            return std::nullopt;
        }
        request.feedback = feedback;
        if ((config_.always_few_shot || ctx.validation_failed) && few_shot_)
            request.few_shot = few_shot_->examples_for(question, config_.few_shot_n);

        SkillResponse response;
        try {
            response = gateway_->complete(request);
            ++ctx.llm_calls;
        } catch (const BackendError&) {
            ctx.trace.push_back(
                {ctx.step, skill_name(request.kind), "", {}, attempt, "backend-failure"});
            return std::nullopt;
        }
        std::string digest = digest_of(ScriptedBackend::request_key(request));

        std::string candidate =
            response.parsed_items.empty() ? "" : response.parsed_items.front();
        auto valid = candidate.empty() ? ValidationResult{false, "no query in output"}
                                       : validate_sparql(candidate);
        ctx.trace.push_back({ctx.step, skill_name(request.kind), digest,
                             {candidate.empty() ? response.raw_text : candidate}, attempt,
                             valid.ok ? "" : "invalid"});
        if (valid.ok) return make_sparql_query(candidate, config_.dialect);

        ctx.validation_failed = true;
        feedback.push_back("the previous query was not valid SPARQL (" + valid.message +
                           "); produce one complete query");
    }
    return std::nullopt;
}

AnswerSet SpPipeline::run(const std::string& question) const {
    AnswerSet out;
    RunContext ctx;

    ctx.step = 1;
    auto entity_ids = identify_entities(question, ctx);
    if (entity_ids.empty() && config_.dialect != SparqlDialect::kqapro_literal) {
        out.llm_calls = ctx.llm_calls;
        out.trace = std::move(ctx.trace);
        return out;
    }

    ctx.step = 2;
    auto predicate_ids = identify_predicates(question, ctx);
    if (predicate_ids.empty() && config_.dialect != SparqlDialect::kqapro_literal) {
        out.llm_calls = ctx.llm_calls;
        out.trace = std::move(ctx.trace);
        return out;
    }

    std::vector<std::string> execution_feedback;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        ctx.step = 3;
        auto query = generate_sparql(question, entity_ids, predicate_ids, execution_feedback, ctx);
        if (!query) break;

        ctx.step = 4;
        auto result = endpoint_->execute(query->text);
        if (result.ok) {
            out.answers = bindings_to_answers(result.bindings);
            out.accepted = !out.answers.empty();
            ctx.trace.push_back({4, "execute-sparql", digest_of(query->text), out.answers, attempt,
                                 out.accepted ? "" : "empty-result"});
            break;
        }
        ctx.trace.push_back({4, "execute-sparql", digest_of(query->text),
                             {result.error_message}, attempt, "execution-error"});
        execution_feedback.push_back("SPARQL endpoint error: " + result.error_message);
    }

    out.llm_calls = ctx.llm_calls;
    out.trace = std::move(ctx.trace);
    return out;
}

}  // namespace kgqa
