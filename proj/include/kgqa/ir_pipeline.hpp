#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kgqa/few_shot.hpp"
#include "kgqa/llm_gateway.hpp"
#include "kgqa/trace.hpp"
#include "kgqa/triple_store.hpp"

namespace kgqa {

struct AnswerSet {
    std::vector<std::string> answers;
    bool accepted = false;
    int hops_used = 0;
    int llm_calls = 0;
    std::vector<TraceRecord> trace;
};

// Relation-label sequence as node-category waypoints, e.g.
// movie_to_actor_to_movie_to_year -> {movie, actor, movie, year}.
struct QueryPath {
    std::string name;
    std::vector<std::string> waypoints;

    static QueryPath parse(std::string_view name);
    friend bool operator==(const QueryPath&, const QueryPath&) = default;
};

// one path type per line; blank lines skipped
std::vector<QueryPath> load_path_catalog(const std::string& path);

// Most frequent path; ties go to the path of the highest-similarity vote.
QueryPath majority_path(const std::vector<std::pair<QueryPath, double>>& votes);

// Walks the path's relations from the movie, layer by layer, excluding at
// step i the entities already visited at step i-2. Dead end -> not accepted.
AnswerSet traverse_path(const KnowledgeGraph& graph, EntityId movie, const QueryPath& path);

struct IrConfig {
    int k = 1;
    int max_hops = 4;
    int retries = 2;
    int few_shot_n = 5;
    bool always_few_shot = false;
    bool expand_cvt = true;
    int rag_chunks = 8;
    ChunkingConfig rag_chunking{.size = 48, .overlap = 8};
};

// Mutable state threaded through one question's run: the LLM call budget,
// the audit trace, and whether a validation failure switched us to few-shot.
struct RunContext {
    int step = 0;
    int llm_calls = 0;
    int call_budget = 0;  // 0 = unlimited
    bool validation_failed = false;
    std::vector<TraceRecord> trace;

    bool budget_left() const { return call_budget == 0 || llm_calls < call_budget; }
};

struct RelationPick {
    bool ok = false;
    std::vector<RelationId> relations;
    int feedback_rounds = 0;
    bool used_fallback = false;
    bool used_rag = false;
    std::string last_raw;
};

struct EntityDecision {
    bool is_answer = false;  // false = continue the loop
    std::vector<std::string> answers;
};

// The iterative IR strategy: expand 1-hop relations, let the LLM filter them,
// expand entities (through CVT nodes), and let the LLM accept or continue.
class IrPipeline {
public:
    IrPipeline(const KnowledgeGraph& graph, std::shared_ptr<LlmGateway> gateway,
               IrConfig config = {},
               std::shared_ptr<const FewShotStore> few_shot = nullptr,
               std::shared_ptr<const Embedder> rag_embedder = nullptr);

    AnswerSet run(const std::string& question, const std::vector<EntityId>& topic_entities) const;

    // Skills, callable on their own. They record into ctx and respect its
    // call budget.
    RelationPick relation_filter_skill(const std::string& question,
                                       const std::vector<EntityId>& topic,
                                       const std::vector<RelationId>& candidates, int k,
                                       RunContext& ctx) const;
    RelationPick relation_multi_skill(const std::string& question,
                                      const std::vector<EntityId>& topic,
                                      const std::vector<RelationId>& candidates,
                                      RunContext& ctx) const;
    EntityDecision entity_filter_skill(const std::string& question, const CandidateSet& candidates,
                                       RunContext& ctx) const;

    // MetaQA query-path machinery.
    void set_path_catalog(std::vector<QueryPath> catalog) { path_catalog_ = std::move(catalog); }
    const std::vector<QueryPath>& path_catalog() const { return path_catalog_; }

    std::optional<QueryPath> predict_query_path(const std::string& question, bool few_shot,
                                                RunContext& ctx) const;

    enum class PathMode { llm_zero_shot, llm_few_shot, majority };
    AnswerSet run_path_strategy(const std::string& question, EntityId topic_movie,
                                PathMode mode) const;

    const IrConfig& config() const { return config_; }

private:
    struct SkillCall {
        bool ok = false;
        SkillResponse response;
        bool used_rag = false;
    };
    // completes a request, falling back to RAG over the context corpus when
    // the rendered prompt exceeds the window; retries transport errors
    SkillCall complete_with_rag(SkillRequest request, const std::string& rag_query,
                                RunContext& ctx) const;
    RelationPick relation_skill_loop(SkillKind kind, const std::string& question,
                                     const std::vector<EntityId>& topic,
                                     const std::vector<RelationId>& candidates, int keep_k,
                                     RunContext& ctx) const;
    std::vector<std::string> topic_labels(const std::vector<EntityId>& topic) const;

    const KnowledgeGraph& graph_;
    std::shared_ptr<LlmGateway> gateway_;
    IrConfig config_;
    std::shared_ptr<const FewShotStore> few_shot_;
    std::shared_ptr<const Embedder> rag_embedder_;
    std::vector<QueryPath> path_catalog_;
};

}  // namespace kgqa
