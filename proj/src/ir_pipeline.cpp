#include "kgqa/ir_pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace kgqa {

QueryPath QueryPath::parse(std::string_view name) {
    QueryPath path;
    path.name = trim(name);
    std::string cursor = path.name;
    const std::string sep = "_to_";
    std::size_t pos = 0;
    while (true) {
        auto next = cursor.find(sep, pos);
        if (next == std::string::npos) {
            path.waypoints.push_back(cursor.substr(pos));
            break;
        }
        path.waypoints.push_back(cursor.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return path;
}

std::vector<QueryPath> load_path_catalog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read path catalog: " + path);
    std::vector<QueryPath> out;
    std::string line;
    while (std::getline(in, line)) {
        auto v = trim_view(line);
        if (v.empty() || v.front() == '#') continue;
        out.push_back(QueryPath::parse(v));
    }
    return out;
}

QueryPath majority_path(const std::vector<std::pair<QueryPath, double>>& votes) {
    if (votes.empty()) throw DataError("majority_path over an empty vote list");
    std::map<std::string, int> counts;
    for (const auto& [path, sim] : votes) ++counts[path.name];
    int best_count = 0;
    for (const auto& [name, count] : counts) best_count = std::max(best_count, count);

    const QueryPath* winner = nullptr;
    double winner_sim = 0;
    for (const auto& [path, sim] : votes) {
        if (counts[path.name] != best_count) continue;
        if (!winner || sim > winner_sim) {
            winner = &path;
            winner_sim = sim;
        }
    }
    return *winner;
}

namespace {

const std::map<std::string, std::string>& category_relations() {
    static const std::map<std::string, std::string> table = {
        {"actor", "starred_actors"},   {"director", "directed_by"},
        {"writer", "written_by"},      {"genre", "has_genre"},
        {"language", "in_language"},   {"year", "release_year"},
        {"tags", "has_tags"},          {"rating", "has_imdb_rating"},
        {"votes", "has_imdb_votes"},
    };
    return table;
}

std::string relation_for_category(const std::string& category) {
    auto it = category_relations().find(category);
    if (it == category_relations().end())
        throw DataError("unknown path category '" + category + "'");
    return it->second;
}

std::string normalize_path_name(std::string_view s) {
    std::string out = normalize_label(s);
    for (char& c : out)
        if (c == ' ') c = '_';
    return out;
}

}  // namespace

AnswerSet traverse_path(const KnowledgeGraph& graph, EntityId movie, const QueryPath& path) {
    if (movie >= graph.entity_count())
        throw DataError("unknown movie entity id " + std::to_string(movie));
    if (path.waypoints.size() < 2)
        throw DataError("path '" + path.name + "' has no steps");

    AnswerSet out;
    std::vector<std::vector<EntityId>> layers;
    layers.push_back({movie});

    for (std::size_t i = 1; i < path.waypoints.size(); ++i) {
        const std::string& prev = path.waypoints[i - 1];
        const std::string& cur = path.waypoints[i];
        bool forward;
        std::string rel_label;
        if (prev == "movie" && cur != "movie") {
            rel_label = relation_for_category(cur);
            forward = true;
        } else if (cur == "movie" && prev != "movie") {
            rel_label = relation_for_category(prev);
            forward = false;
        } else {
            throw DataError("unsupported path step " + prev + "->" + cur);
        }

        std::set<EntityId> next;
        if (auto rel = graph.relations().by_label(rel_label)) {
            for (EntityId e : layers[i - 1]) {
                if (forward) {
                    for (const auto& [r, t] : graph.forward(e))
                        if (r == *rel) next.insert(t);
                } else {
                    for (const auto& [r, h] : graph.reverse(e))
                        if (r == *rel) next.insert(h);
                }
            }
        }
        if (i >= 2)
            for (EntityId e : layers[i - 2]) next.erase(e);

        out.hops_used = static_cast<int>(i);
        if (next.empty()) return out;  // dead end, not accepted
        layers.emplace_back(next.begin(), next.end());
    }

    for (EntityId e : layers.back()) out.answers.push_back(graph.display_label(e));
    out.accepted = true;
    return out;
}

std::shared_ptr<FewShotStore> load_few_shot_corpus(const std::string& path,
                                                   std::shared_ptr<const Embedder> embedder) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read few-shot corpus: " + path);
    auto store = std::make_shared<FewShotStore>(std::move(embedder));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim_view(line).empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() < 2)
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected question<TAB>solution[<TAB>source-id]");
        FewShotExample ex;
        ex.question = tsv_unescape(cols[0]);
        ex.solution = tsv_unescape(cols[1]);
        ex.source_id = cols.size() > 2 ? cols[2] : "line-" + std::to_string(lineno);
        if (ex.solution.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": empty solution");
        store->add(std::move(ex));
    }
    return store;
}

IrPipeline::IrPipeline(const KnowledgeGraph& graph, std::shared_ptr<LlmGateway> gateway,
                       IrConfig config, std::shared_ptr<const FewShotStore> few_shot,
                       std::shared_ptr<const Embedder> rag_embedder)
    : graph_(graph), gateway_(std::move(gateway)), config_(config),
      few_shot_(std::move(few_shot)), rag_embedder_(std::move(rag_embedder)) {
    if (!gateway_) throw ConfigError("ir pipeline requires a gateway");
    if (!rag_embedder_) rag_embedder_ = std::make_shared<HashEmbedder>(64, 1);
}

std::vector<std::string> IrPipeline::topic_labels(const std::vector<EntityId>& topic) const {
    std::vector<std::string> labels;
    labels.reserve(topic.size());
    for (EntityId e : topic) labels.push_back(graph_.display_label(e));
    return labels;
}

IrPipeline::SkillCall IrPipeline::complete_with_rag(SkillRequest request,
                                                    const std::string& rag_query,
                                                    RunContext& ctx) const {
    SkillCall call;

    auto attempt = [&](const SkillRequest& req) {
        int transport_tries = 0;
        while (true) {
            try {
                auto resp = gateway_->complete(req);
                ++ctx.llm_calls;
                return resp;
            } catch (const BackendError& e) {
                ++ctx.llm_calls;
                if (!e.retryable || transport_tries >= config_.retries) throw;
                ++transport_tries;
            }
        }
    };

    try {
        call.response = attempt(request);
        call.ok = true;
        return call;
    } catch (const BudgetError&) {
        // context does not fit: retrieve only the most relevant chunks
        EmbeddingIndex index(rag_embedder_);
        std::string corpus;
        for (const auto& item : request.context_items) {
            corpus += item.text;
            corpus += '\n';
        }
        index.add("candidates", corpus, config_.rag_chunking);
        auto top = index.top_k(rag_query, config_.rag_chunks);
        request.context_items.clear();
        for (const auto& scored : top.items)
            request.context_items.push_back(
                {"chunk-" + std::to_string(scored.chunk_id), index.chunk(scored.chunk_id).text});
        call.used_rag = true;
    } catch (const BackendError&) {
        return call;  // not ok
    }

    try {
        call.response = attempt(request);
        call.ok = true;
    } catch (const BudgetError&) {
        call.ok = false;
    } catch (const BackendError&) {
        call.ok = false;
    }
    return call;
}

RelationPick IrPipeline::relation_skill_loop(SkillKind kind, const std::string& question,
                                             const std::vector<EntityId>& topic,
                                             const std::vector<RelationId>& candidates, int keep_k,
                                             RunContext& ctx) const {
    if (candidates.empty()) throw DataError("relation skill requires candidate relations");

    RelationPick pick;
    std::vector<ContextItem> context;
    context.reserve(candidates.size());
    for (RelationId r : candidates) {
        const std::string& label = graph_.relations().label(r);
        context.push_back({label, label});
    }

    std::vector<std::string> feedback;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (!ctx.budget_left()) {
            ctx.trace.push_back({ctx.step, skill_name(kind), "", {}, attempt, "call-budget"});
            return pick;
        }
        SkillRequest request;
        request.kind = kind;
        request.question = question;
        request.context_items = context;
        request.feedback = feedback;
        request.k = keep_k > 0 ? keep_k : static_cast<int>(candidates.size());
        if ((config_.always_few_shot || ctx.validation_failed) && few_shot_)
            request.few_shot = few_shot_->examples_for(question, config_.few_shot_n);

        auto call = complete_with_rag(request, composite_query(question, topic_labels(topic)), ctx);
        std::string digest = digest_of(ScriptedBackend::request_key(request));
        if (!call.ok) {
            ctx.trace.push_back({ctx.step, skill_name(kind), digest, {}, attempt, "backend-failure"});
            return pick;
        }
        pick.used_rag = pick.used_rag || call.used_rag;
        pick.last_raw = call.response.raw_text;
        pick.feedback_rounds = attempt;

        std::vector<RelationId> valid;
        std::vector<std::string> invalid;
        for (const auto& item : call.response.parsed_items) {
            auto hit = graph_.contains(item);
            if (hit.found && hit.kind == ContainsResult::Kind::relation) {
                if (std::find(valid.begin(), valid.end(), hit.id) == valid.end())
                    valid.push_back(hit.id);
            } else {
                invalid.push_back(item);
            }
        }
        ctx.trace.push_back({ctx.step, skill_name(kind), digest, call.response.parsed_items,
                             attempt, call.used_rag ? "rag" : ""});

        if (!valid.empty()) {
            if (keep_k > 0 && valid.size() > static_cast<std::size_t>(keep_k))
                valid.resize(static_cast<std::size_t>(keep_k));
            pick.relations = std::move(valid);
            pick.ok = true;
            return pick;
        }

        ctx.validation_failed = true;
        std::string offender = invalid.empty() ? pick.last_raw : invalid.front();
        feedback.push_back("relation '" + offender +
                           "' is not present in the graph; choose only from the candidate relations");
    }
    pick.feedback_rounds = config_.retries;
    return pick;
}

RelationPick IrPipeline::relation_filter_skill(const std::string& question,
                                               const std::vector<EntityId>& topic,
                                               const std::vector<RelationId>& candidates, int k,
                                               RunContext& ctx) const {
    auto pick = relation_skill_loop(SkillKind::relation_filter, question, topic, candidates, k, ctx);
    if (pick.ok || !ctx.budget_left()) return pick;

    // hallucination fallback: ask for multiple candidates instead of one
    ctx.trace.push_back({ctx.step, skill_name(SkillKind::relation_filter), "", {}, 0, "fallback"});
    auto multi = relation_multi_skill(question, topic, candidates, ctx);
    multi.used_fallback = true;
    multi.feedback_rounds = pick.feedback_rounds;
    return multi;
}

RelationPick IrPipeline::relation_multi_skill(const std::string& question,
                                              const std::vector<EntityId>& topic,
                                              const std::vector<RelationId>& candidates,
                                              RunContext& ctx) const {
    return relation_skill_loop(SkillKind::relation_multi, question, topic, candidates, 0, ctx);
}

EntityDecision IrPipeline::entity_filter_skill(const std::string& question,
                                               const CandidateSet& candidates,
                                               RunContext& ctx) const {
    if (candidates.empty()) throw DataError("entity filter requires candidates");

    EntityDecision decision;
    SkillRequest request;
    request.kind = SkillKind::entity_filter;
    request.question = question;
    request.k = 1;
    for (EntityId e : candidates.entities) {
        std::string label = graph_.display_label(e);
        std::string text = label;
        auto prov = candidates.provenance.find(e);
        if (prov != candidates.provenance.end() && !prov->second.empty()) {
            const Provenance& p = prov->second.front();
            text += " (from " + graph_.display_label(p.from) + " via " +
                    graph_.relations().label(p.first_rel);
            if (p.second_rel) text += " / " + graph_.relations().label(*p.second_rel);
            text += ")";
        }
        request.context_items.push_back({label, std::move(text)});
    }
    if ((config_.always_few_shot || ctx.validation_failed) && few_shot_)
        request.few_shot = few_shot_->examples_for(question, config_.few_shot_n);

    if (!ctx.budget_left()) {
        ctx.trace.push_back({ctx.step, skill_name(request.kind), "", {}, 0, "call-budget"});
        decision.is_answer = false;
        return decision;
    }

    auto call = complete_with_rag(request, question, ctx);
    std::string digest = digest_of(ScriptedBackend::request_key(request));
    if (!call.ok) {
        ctx.trace.push_back({ctx.step, skill_name(request.kind), digest, {}, 0, "backend-failure"});
        throw BackendError("entity filter skill failed after retries", /*retryable=*/false);
    }

    if (is_continue_sentinel(call.response.raw_text)) {
        ctx.trace.push_back({ctx.step, skill_name(request.kind), digest,
                             call.response.parsed_items, 0, "continue"});
        return decision;
    }

    // validate against candidate labels, normalized; unmatched items dropped
    std::map<std::string, std::string> by_norm;
    for (EntityId e : candidates.entities) {
        std::string label = graph_.display_label(e);
        by_norm.emplace(normalize_label(label), label);
    }
    for (const auto& item : call.response.parsed_items) {
        auto it = by_norm.find(normalize_label(item));
        if (it == by_norm.end()) continue;
        if (std::find(decision.answers.begin(), decision.answers.end(), it->second) ==
            decision.answers.end())
            decision.answers.push_back(it->second);
    }
    decision.is_answer = !decision.answers.empty();
    ctx.trace.push_back({ctx.step, skill_name(request.kind), digest, call.response.parsed_items, 0,
                         decision.is_answer ? "answer" : "continue"});
    return decision;
}

AnswerSet IrPipeline::run(const std::string& question,
                          const std::vector<EntityId>& topic_entities) const {
    if (topic_entities.empty()) throw DataError("IR run requires at least one topic entity");
    for (EntityId e : topic_entities)
        if (e >= graph_.entity_count())
            throw DataError("topic entity id " + std::to_string(e) + " is not in the catalog");

    AnswerSet out;
    RunContext ctx;
    ctx.call_budget = 2 * config_.max_hops * (1 + config_.retries);

    std::vector<EntityId> frontier(topic_entities.begin(), topic_entities.end());
    std::sort(frontier.begin(), frontier.end());
    frontier.erase(std::unique(frontier.begin(), frontier.end()), frontier.end());

    for (int hop = 1; hop <= config_.max_hops; ++hop) {
        ctx.step = hop;
        out.hops_used = hop;

        auto relations = one_hop_relations(graph_, frontier);
        if (relations.empty()) {
            ctx.trace.push_back({hop, "one-hop-relations", "", {}, 0, "dead-end"});
            break;
        }
        {
            std::vector<std::string> labels;
            labels.reserve(relations.size());
            for (RelationId r : relations) labels.push_back(graph_.relations().label(r));
            ctx.trace.push_back({hop, "one-hop-relations", digest_of(join(labels, ",")),
                                 std::move(labels), 0, ""});
        }

        auto pick = relation_filter_skill(question, frontier, relations, config_.k, ctx);
        if (!pick.ok) break;

        auto candidates = one_hop_entities(graph_, frontier, pick.relations, config_.expand_cvt);
        candidates.hop = hop;
        {
            std::vector<std::string> labels;
            labels.reserve(candidates.entities.size());
            for (EntityId e : candidates.entities) labels.push_back(graph_.display_label(e));
            ctx.trace.push_back({hop, "one-hop-entities", digest_of(join(labels, ",")),
                                 std::move(labels), 0, ""});
        }
        if (candidates.empty()) {
            ctx.trace.push_back({hop, "one-hop-entities", "", {}, 0, "dead-end"});
            break;
        }

        EntityDecision decision;
        try {
            decision = entity_filter_skill(question, candidates, ctx);
        } catch (const BackendError&) {
            break;
        }
        if (decision.is_answer) {
            out.answers = std::move(decision.answers);
            out.accepted = true;
            break;
        }
        frontier = candidates.entities;
    }

    out.llm_calls = ctx.llm_calls;
    out.trace = std::move(ctx.trace);
    return out;
}

std::optional<QueryPath> IrPipeline::predict_query_path(const std::string& question, bool few_shot,
                                                        RunContext& ctx) const {
    if (path_catalog_.empty()) throw ConfigError("path catalog not loaded");

    std::map<std::string, const QueryPath*> by_norm;
    SkillRequest request;
    request.kind = SkillKind::path_predict;
    request.question = question;
    request.k = 1;
    for (const auto& path : path_catalog_) {
        request.context_items.push_back({path.name, path.name});
        by_norm.emplace(normalize_path_name(path.name), &path);
    }
    if (few_shot && few_shot_)
        request.few_shot = few_shot_->examples_for(question, config_.few_shot_n);

    std::vector<std::string> feedback;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (!ctx.budget_left()) {
            ctx.trace.push_back({ctx.step, skill_name(request.kind), "", {}, attempt, "call-budget"});
            return std::nullopt;
        }
        request.feedback = feedback;
        auto call = complete_with_rag(request, question, ctx);
        std::string digest = digest_of(ScriptedBackend::request_key(request));
        if (!call.ok) {
            ctx.trace.push_back({ctx.step, skill_name(request.kind), digest, {}, attempt,
                                 "backend-failure"});
            return std::nullopt;
        }
        std::string item = call.response.parsed_items.empty() ? call.response.raw_text
                                                              : call.response.parsed_items.front();
        ctx.trace.push_back({ctx.step, skill_name(request.kind), digest,
                             call.response.parsed_items, attempt, ""});
        auto it = by_norm.find(normalize_path_name(item));
        if (it != by_norm.end()) return *it->second;

        ctx.validation_failed = true;
        feedback.push_back("'" + item + "' is not one of the allowed path types");
    }
    return std::nullopt;
}

AnswerSet IrPipeline::run_path_strategy(const std::string& question, EntityId topic_movie,
                                        PathMode mode) const {
    AnswerSet out;
    RunContext ctx;
    ctx.call_budget = 1 + config_.retries;

    std::optional<QueryPath> path;
    if (mode == PathMode::majority) {
        if (!few_shot_ || few_shot_->size() == 0)
            throw ConfigError("majority path mode requires a few-shot corpus");
        std::vector<std::pair<QueryPath, double>> votes;
        for (auto& [ex, sim] :
             few_shot_->top_n(question, static_cast<std::size_t>(config_.few_shot_n)))
            votes.emplace_back(QueryPath::parse(ex.solution), sim);
        path = majority_path(votes);
        ctx.trace.push_back({1, "majority-path", digest_of(question), {path->name}, 0, ""});
    } else {
        ctx.step = 1;
        path = predict_query_path(question, mode == PathMode::llm_few_shot, ctx);
    }

    if (!path) {
        out.llm_calls = ctx.llm_calls;
        out.trace = std::move(ctx.trace);
        return out;
    }

    AnswerSet walked = traverse_path(graph_, topic_movie, *path);
    ctx.trace.push_back({1, "traverse-path", digest_of(path->name), walked.answers, 0,
                         walked.accepted ? "" : "dead-end"});
    walked.llm_calls = ctx.llm_calls;
    walked.trace = std::move(ctx.trace);
    return walked;
}

}  // namespace kgqa
