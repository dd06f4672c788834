#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

// One (head, relation, tail) edge. Ids index the graph's catalogs.
struct Triple {
    EntityId head;
    RelationId relation;
    EntityId tail;

    friend bool operator==(const Triple&, const Triple&) = default;
};

// local-id <-> external-id bijection plus labels and the CVT flag.
// CVT nodes may be unlabeled; label lookups on them yield an explicit marker.
class EntityCatalog {
public:
    EntityId intern(std::string external_id, std::string label, bool is_cvt = false);

    std::size_t size() const { return external_.size(); }
    const std::string& external_id(EntityId id) const { return external_[id]; }
    const std::string& label(EntityId id) const { return labels_[id]; }
    bool has_label(EntityId id) const { return !labels_[id].empty(); }
    // label, or "[unlabeled:<external-id>]" for label-less nodes
    std::string display_label(EntityId id) const;
    bool is_cvt(EntityId id) const { return cvt_[id]; }
    void set_cvt(EntityId id, bool v) { cvt_[id] = v; }

    std::optional<EntityId> by_external(std::string_view ext) const;
    // exact match first, then lowercase+trim fallback
    std::optional<EntityId> by_label(std::string_view label) const;
    std::optional<EntityId> by_label_exact(std::string_view label) const;

private:
    std::vector<std::string> external_;
    std::vector<std::string> labels_;
    std::vector<char> cvt_;
    std::unordered_map<std::string, EntityId> by_external_;
    std::unordered_map<std::string, EntityId> by_label_;
    std::unordered_map<std::string, EntityId> by_norm_label_;
};

class RelationCatalog {
public:
    RelationId intern(std::string external_id, std::string label);

    std::size_t size() const { return external_.size(); }
    const std::string& external_id(RelationId id) const { return external_[id]; }
    const std::string& label(RelationId id) const { return labels_[id]; }

    std::optional<RelationId> by_external(std::string_view ext) const;
    std::optional<RelationId> by_label(std::string_view label) const;
    std::optional<RelationId> by_label_exact(std::string_view label) const;

private:
    std::vector<std::string> external_;
    std::vector<std::string> labels_;
    std::unordered_map<std::string, RelationId> by_external_;
    std::unordered_map<std::string, RelationId> by_label_;
    std::unordered_map<std::string, RelationId> by_norm_label_;
};

// How a candidate entity was reached from the frontier. second_rel/via_cvt are
// set when the node came out of a CVT expansion.
struct Provenance {
    EntityId from;
    RelationId first_rel;
    std::optional<EntityId> via_cvt;
    std::optional<RelationId> second_rel;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

// Current frontier C_q of an IR iteration.
struct CandidateSet {
    std::vector<EntityId> entities;  // sorted ascending, unique
    int hop = 0;
    std::unordered_map<EntityId, std::vector<Provenance>> provenance;

    bool empty() const { return entities.empty(); }
};

struct ContainsResult {
    bool found = false;
    enum class Kind { relation, entity } kind = Kind::relation;
    std::uint32_t id = 0;
};

// Aggregated outgoing neighbors of one movie, grouped by relation label.
// Order preserved from the source file.
struct MovieDictionary {
    std::vector<std::pair<std::string, std::vector<std::string>>> entries;

    bool empty() const { return entries.empty(); }
    const std::vector<std::string>* find(std::string_view relation) const;
    // Python-dict style rendering used in prompts; lines wrap at `width`.
    std::string to_python_repr(std::size_t width = 79) const;
};

// Immutable after load; safe for concurrent readers across pipelines.
class KnowledgeGraph {
public:
    EntityId intern_entity(std::string external_id, std::string label, bool is_cvt = false);
    RelationId intern_relation(std::string external_id, std::string label);
    // set semantics: duplicate (h,r,t) is kept once; returns false on duplicate
    bool add_triple(EntityId head, RelationId relation, EntityId tail);
    void set_cvt(EntityId id, bool v) { entities_.set_cvt(id, v); }

    std::size_t triple_count() const { return triples_.size(); }
    std::size_t entity_count() const { return entities_.size(); }
    std::size_t relation_count() const { return relations_.size(); }
    std::span<const Triple> triples() const { return triples_; }

    const EntityCatalog& entities() const { return entities_; }
    const RelationCatalog& relations() const { return relations_; }
    bool is_cvt(EntityId id) const { return entities_.is_cvt(id); }
    std::string display_label(EntityId id) const { return entities_.display_label(id); }

    // (relation, neighbor) edges in source order
    std::span<const std::pair<RelationId, EntityId>> forward(EntityId id) const;
    std::span<const std::pair<RelationId, EntityId>> reverse(EntityId id) const;

    // case-sensitive exact label match first, then lowercase+trim fallback;
    // relations win over entities when both match
    ContainsResult contains(std::string_view label) const;

    void save_snapshot(const std::string& path) const;
    static KnowledgeGraph load_snapshot(const std::string& path);

private:
    std::vector<Triple> triples_;
    EntityCatalog entities_;
    RelationCatalog relations_;
    std::vector<std::vector<std::pair<RelationId, EntityId>>> forward_;
    std::vector<std::vector<std::pair<RelationId, EntityId>>> reverse_;
    std::unordered_map<std::uint64_t, std::vector<Triple>> dedup_;
};

enum class TripleFormat { tsv, pipe, ntriples, id_coded };

struct LoadOptions {
    bool strict = false;                         // fail on first malformed line
    std::vector<std::string> cvt_external_ids;   // explicit CVT list
    bool unlabeled_is_cvt = false;               // heuristic fallback
    std::string entity_catalog_path;             // id-coded sidecars
    std::string relation_catalog_path;
};

struct LoadReport {
    std::uint64_t triples = 0;
    std::uint64_t entities = 0;
    std::uint64_t relations = 0;
    std::uint64_t malformed = 0;

    // line-oriented key=value text
    std::string to_text() const;
};

struct LoadResult {
    KnowledgeGraph graph;
    LoadReport report;
};

LoadResult load_graph(const std::string& path, TripleFormat format, const LoadOptions& options = {});
LoadResult load_graph_stream(std::istream& in, TripleFormat format, const LoadOptions& options = {});

// Relations on edges incident (either direction) to any frontier entity.
// Sorted ascending, deduplicated.
std::vector<RelationId> one_hop_relations(const KnowledgeGraph& graph,
                                          std::span<const EntityId> frontier);

// Entities one edge away from the frontier over the given relations (either
// direction). With expand_cvt, reached CVT nodes are replaced by their 1-hop
// neighbors (any relation, excluding the frontier node they were reached
// from); CVT nodes never appear in the result.
CandidateSet one_hop_entities(const KnowledgeGraph& graph,
                              std::span<const EntityId> frontier,
                              std::span<const RelationId> relations,
                              bool expand_cvt);

MovieDictionary build_movie_dictionary(const KnowledgeGraph& graph, EntityId movie);

}  // namespace kgqa
