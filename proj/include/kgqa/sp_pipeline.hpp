#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgqa/embedding_index.hpp"
#include "kgqa/few_shot.hpp"
#include "kgqa/ir_pipeline.hpp"
#include "kgqa/llm_gateway.hpp"
#include "kgqa/sparql.hpp"

namespace kgqa {

enum class TermKind { entity, predicate };

const char* term_kind_name(TermKind kind);

struct TermEntry {
    std::string id;           // QID/PID or surface form
    std::string description;  // may be empty only when unfetched
    bool fetched = true;
};

// One kind's id -> description map, in insertion order.
class TermCatalog {
public:
    explicit TermCatalog(TermKind kind) : kind_(kind) {}

    TermKind kind() const { return kind_; }
    std::size_t size() const { return entries_.size(); }
    const std::vector<TermEntry>& entries() const { return entries_; }
    const TermEntry* find(const std::string& id) const;

    // duplicate ids update the existing entry
    void add(std::string id, std::string description, bool fetched = true);

    // cache file: TSV id<TAB>kind<TAB>description, append-only
    static TermCatalog load_cache(const std::string& path, TermKind kind);

private:
    TermKind kind_;
    std::vector<TermEntry> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

struct FetchStats {
    std::size_t cached = 0;
    std::size_t fetched = 0;
    std::size_t failed = 0;
};

// Fetch descriptions for ids over HTTP (url_template with an {id}
// placeholder), reusing and appending to the TSV cache. Failures are flagged
// unfetched, never fatal; re-running fetches only the missing ids.
TermCatalog fetch_descriptions(const std::vector<std::string>& ids, TermKind kind,
                               const std::string& url_template, const std::string& cache_path,
                               int max_parallel = 4, FetchStats* stats = nullptr);

struct SpConfig {
    int k_entities = 10;
    int k_predicates = 10;
    int few_shot_n = 5;
    int retries = 2;
    bool always_few_shot = false;
    SparqlDialect dialect = SparqlDialect::wikidata;
    std::optional<std::vector<std::string>> known_entities;
};

// The semantic-parsing strategy: identify entities and predicates by RAG
// over the description catalogs, generate SPARQL, execute, and feed endpoint
// errors back into generation.
class SpPipeline {
public:
    SpPipeline(std::shared_ptr<LlmGateway> gateway, std::shared_ptr<SparqlEndpoint> endpoint,
               TermCatalog entity_catalog, TermCatalog predicate_catalog, SpConfig config = {},
               std::shared_ptr<const FewShotStore> few_shot = nullptr,
               std::shared_ptr<const Embedder> embedder = nullptr);

    std::vector<std::string> identify_entities(const std::string& question, RunContext& ctx) const;
    std::vector<std::string> identify_predicates(const std::string& question,
                                                 RunContext& ctx) const;

    std::optional<SparqlQuery> generate_sparql(const std::string& question,
                                               const std::vector<std::string>& entities,
                                               const std::vector<std::string>& predicates,
                                               const std::vector<std::string>& execution_feedback,
                                               RunContext& ctx) const;

    AnswerSet run(const std::string& question) const;

    const SpConfig& config() const { return config_; }
    const TermCatalog& entity_catalog() const { return entities_; }
    const TermCatalog& predicate_catalog() const { return predicates_; }

private:
    std::vector<std::string> identify_terms(SkillKind kind, const std::string& question,
                                            const TermCatalog& catalog,
                                            const EmbeddingIndex& index, int k,
                                            RunContext& ctx) const;

    std::shared_ptr<LlmGateway> gateway_;
    std::shared_ptr<SparqlEndpoint> endpoint_;
    TermCatalog entities_;
    TermCatalog predicates_;
    SpConfig config_;
    std::shared_ptr<const FewShotStore> few_shot_;
    std::shared_ptr<const Embedder> embedder_;
    std::unique_ptr<EmbeddingIndex> entity_index_;
    std::unique_ptr<EmbeddingIndex> predicate_index_;
};

}  // namespace kgqa
