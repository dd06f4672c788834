#include "kgqa/triple_store.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <sstream>
#include <tuple>

namespace kgqa {

EntityId EntityCatalog::intern(std::string external_id, std::string label, bool is_cvt) {
    if (auto it = by_external_.find(external_id); it != by_external_.end()) return it->second;
    EntityId id = static_cast<EntityId>(external_.size());
    by_external_.emplace(external_id, id);
    if (!label.empty()) {
        by_label_.emplace(label, id);
        by_norm_label_.emplace(normalize_label(label), id);
    }
    external_.push_back(std::move(external_id));
    labels_.push_back(std::move(label));
    cvt_.push_back(is_cvt ? 1 : 0);
    return id;
}

std::string EntityCatalog::display_label(EntityId id) const {
    if (!labels_[id].empty()) return labels_[id];
    return "[unlabeled:" + external_[id] + "]";
}

std::optional<EntityId> EntityCatalog::by_external(std::string_view ext) const {
    auto it = by_external_.find(std::string(ext));
    if (it == by_external_.end()) return std::nullopt;
    return it->second;
}

std::optional<EntityId> EntityCatalog::by_label(std::string_view label) const {
    if (auto id = by_label_exact(label)) return id;
    if (auto it = by_norm_label_.find(normalize_label(label)); it != by_norm_label_.end())
        return it->second;
    return std::nullopt;
}

std::optional<EntityId> EntityCatalog::by_label_exact(std::string_view label) const {
    auto it = by_label_.find(std::string(label));
    if (it == by_label_.end()) return std::nullopt;
    return it->second;
}

RelationId RelationCatalog::intern(std::string external_id, std::string label) {
    if (auto it = by_external_.find(external_id); it != by_external_.end()) return it->second;
    RelationId id = static_cast<RelationId>(external_.size());
    by_external_.emplace(external_id, id);
    if (!label.empty()) {
        by_label_.emplace(label, id);
        by_norm_label_.emplace(normalize_label(label), id);
    }
    external_.push_back(std::move(external_id));
    labels_.push_back(std::move(label));
    return id;
}

std::optional<RelationId> RelationCatalog::by_external(std::string_view ext) const {
    auto it = by_external_.find(std::string(ext));
    if (it == by_external_.end()) return std::nullopt;
    return it->second;
}

std::optional<RelationId> RelationCatalog::by_label(std::string_view label) const {
    if (auto id = by_label_exact(label)) return id;
    if (auto it = by_norm_label_.find(normalize_label(label)); it != by_norm_label_.end())
        return it->second;
    return std::nullopt;
}

std::optional<RelationId> RelationCatalog::by_label_exact(std::string_view label) const {
    auto it = by_label_.find(std::string(label));
    if (it == by_label_.end()) return std::nullopt;
    return it->second;
}

const std::vector<std::string>* MovieDictionary::find(std::string_view relation) const {
    for (const auto& [rel, values] : entries)
        if (rel == relation) return &values;
    return nullptr;
}

namespace {

std::string py_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'' || c == '\\') out += '\\';
        out += c;
    }
    out += '\'';
    return out;
}

}  // namespace

std::string MovieDictionary::to_python_repr(std::size_t width) const {
    if (entries.empty()) return "{}";
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& [rel, values] = entries[i];
        std::string prefix = i == 0 ? "{" : " ";
        std::string suffix = i + 1 == entries.size() ? "}" : ",";

        std::string inline_items;
        for (std::size_t j = 0; j < values.size(); ++j) {
            if (j) inline_items += ", ";
            inline_items += py_quote(values[j]);
        }
        std::string inline_line = prefix + py_quote(rel) + ": [" + inline_items + "]" + suffix;
        if (inline_line.size() <= width || values.size() <= 1) {
            out += inline_line;
        } else {
            out += prefix + py_quote(rel) + ": [" + py_quote(values[0]) + ",";
            for (std::size_t j = 1; j < values.size(); ++j) {
                out += "\n  " + py_quote(values[j]);
                out += j + 1 == values.size() ? "]" + suffix : ",";
            }
        }
        if (i + 1 != entries.size()) out += "\n";
    }
    return out;
}

EntityId KnowledgeGraph::intern_entity(std::string external_id, std::string label, bool is_cvt) {
    EntityId id = entities_.intern(std::move(external_id), std::move(label), is_cvt);
    if (forward_.size() <= id) {
        forward_.resize(id + 1);
        reverse_.resize(id + 1);
    }
    return id;
}

RelationId KnowledgeGraph::intern_relation(std::string external_id, std::string label) {
    return relations_.intern(std::move(external_id), std::move(label));
}

bool KnowledgeGraph::add_triple(EntityId head, RelationId relation, EntityId tail) {
    Triple t{head, relation, tail};
    std::uint64_t key = (static_cast<std::uint64_t>(head) << 32) | tail;
    auto& bucket = dedup_[key];
    if (std::find(bucket.begin(), bucket.end(), t) != bucket.end()) return false;
    bucket.push_back(t);
    triples_.push_back(t);
    forward_[head].emplace_back(relation, tail);
    reverse_[tail].emplace_back(relation, head);
    return true;
}

std::span<const std::pair<RelationId, EntityId>> KnowledgeGraph::forward(EntityId id) const {
    if (id >= forward_.size()) return {};
    return forward_[id];
}

std::span<const std::pair<RelationId, EntityId>> KnowledgeGraph::reverse(EntityId id) const {
    if (id >= reverse_.size()) return {};
    return reverse_[id];
}

ContainsResult KnowledgeGraph::contains(std::string_view label) const {
    // exact matches of either kind beat normalized ones
    if (auto id = relations_.by_label_exact(label))
        return {true, ContainsResult::Kind::relation, *id};
    if (auto id = entities_.by_label_exact(label))
        return {true, ContainsResult::Kind::entity, *id};
    if (auto id = relations_.by_label(label)) return {true, ContainsResult::Kind::relation, *id};
    if (auto id = entities_.by_label(label)) return {true, ContainsResult::Kind::entity, *id};
    return {};
}

namespace {

constexpr char kSnapshotMagic[] = "KGQASNAP1\n";

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_str(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

std::string read_str(std::istream& in) {
    auto n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

}  // namespace

void KnowledgeGraph::save_snapshot(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write snapshot: " + path);
    out.write(kSnapshotMagic, sizeof(kSnapshotMagic) - 1);
    write_u64(out, entities_.size());
    write_u64(out, relations_.size());
    write_u64(out, triples_.size());
    for (EntityId e = 0; e < entities_.size(); ++e) {
        write_str(out, entities_.external_id(e));
        write_str(out, entities_.label(e));
        char cvt = entities_.is_cvt(e) ? 1 : 0;
        out.write(&cvt, 1);
    }
    for (RelationId r = 0; r < relations_.size(); ++r) {
        write_str(out, relations_.external_id(r));
        write_str(out, relations_.label(r));
    }
    for (const Triple& t : triples_) {
        write_u32(out, t.head);
        write_u32(out, t.relation);
        write_u32(out, t.tail);
    }
    if (!out) throw DataError("snapshot write failed: " + path);
}

KnowledgeGraph KnowledgeGraph::load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read snapshot: " + path);
    char magic[sizeof(kSnapshotMagic)] = {};
    in.read(magic, sizeof(kSnapshotMagic) - 1);
    if (std::string_view(magic, sizeof(kSnapshotMagic) - 1) != kSnapshotMagic)
        throw DataError("not a graph snapshot: " + path);
    KnowledgeGraph g;
    auto n_ent = read_u64(in);
    auto n_rel = read_u64(in);
    auto n_tri = read_u64(in);
    for (std::uint64_t i = 0; i < n_ent; ++i) {
        auto ext = read_str(in);
        auto label = read_str(in);
        char cvt = 0;
        in.read(&cvt, 1);
        g.intern_entity(std::move(ext), std::move(label), cvt != 0);
    }
    for (std::uint64_t i = 0; i < n_rel; ++i) {
        auto ext = read_str(in);
        auto label = read_str(in);
        g.intern_relation(std::move(ext), std::move(label));
    }
    for (std::uint64_t i = 0; i < n_tri; ++i) {
        auto h = read_u32(in);
        auto r = read_u32(in);
        auto t = read_u32(in);
        g.add_triple(h, r, t);
    }
    if (!in) throw DataError("snapshot truncated: " + path);
    return g;
}

std::string LoadReport::to_text() const {
    std::ostringstream out;
    out << "triples=" << triples << "\n"
        << "entities=" << entities << "\n"
        << "relations=" << relations << "\n"
        << "malformed=" << malformed << "\n";
    return out.str();
}

namespace {

struct RawTriple {
    std::string head, relation, tail;
};

bool split3(std::string_view line, char delim, RawTriple& out) {
    auto p1 = line.find(delim);
    if (p1 == std::string_view::npos) return false;
    auto p2 = line.find(delim, p1 + 1);
    if (p2 == std::string_view::npos) return false;
    if (line.find(delim, p2 + 1) != std::string_view::npos) return false;
    out.head = trim(line.substr(0, p1));
    out.relation = trim(line.substr(p1 + 1, p2 - p1 - 1));
    out.tail = trim(line.substr(p2 + 1));
    return !out.head.empty() && !out.relation.empty() && !out.tail.empty();
}

// Minimal N-Triples term scanner: <iri>, "literal" (with escapes, optional
// ^^<type> / @lang suffix), or bare token (blank nodes).
bool next_nt_term(std::string_view line, std::size_t& pos, std::string& term) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos >= line.size()) return false;
    std::size_t start = pos;
    if (line[pos] == '<') {
        auto end = line.find('>', pos);
        if (end == std::string_view::npos) return false;
        term = std::string(line.substr(pos + 1, end - pos - 1));
        pos = end + 1;
        return !term.empty();
    }
    if (line[pos] == '"') {
        ++pos;
        std::string lit;
        while (pos < line.size() && line[pos] != '"') {
            if (line[pos] == '\\' && pos + 1 < line.size()) {
                char c = line[pos + 1];
                switch (c) {
                    case 'n': lit += '\n'; break;
                    case 't': lit += '\t'; break;
                    case 'r': lit += '\r'; break;
                    case '"': lit += '"'; break;
                    case '\\': lit += '\\'; break;
                    default: lit += c;
                }
                pos += 2;
                continue;
            }
            lit += line[pos++];
        }
        if (pos >= line.size()) return false;  // unterminated
        ++pos;                                 // closing quote
        // skip datatype/lang suffix
        if (pos < line.size() && line[pos] == '^') {
            auto end = line.find('>', pos);
            if (end == std::string_view::npos) return false;
            pos = end + 1;
        } else if (pos < line.size() && line[pos] == '@') {
            while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
        }
        term = lit;
        return true;
    }
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
    term = std::string(line.substr(start, pos - start));
    return !term.empty();
}

bool parse_ntriples_line(std::string_view line, RawTriple& out) {
    std::size_t pos = 0;
    if (!next_nt_term(line, pos, out.head)) return false;
    if (!next_nt_term(line, pos, out.relation)) return false;
    if (!next_nt_term(line, pos, out.tail)) return false;
    auto rest = trim_view(line.substr(pos));
    return rest == "." || rest.empty();
}

struct SidecarCatalogs {
    std::unordered_map<std::string, EntityId> entity_by_file_id;
    std::unordered_map<std::string, RelationId> relation_by_file_id;
};

SidecarCatalogs load_sidecars(KnowledgeGraph& g, const LoadOptions& opt) {
    if (opt.entity_catalog_path.empty() || opt.relation_catalog_path.empty())
        throw ConfigError("id-coded format requires entity and relation catalog files");
    SidecarCatalogs side;

    std::ifstream ein(opt.entity_catalog_path);
    if (!ein) throw DataError("cannot read entity catalog: " + opt.entity_catalog_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ein, line)) {
        ++lineno;
        if (trim_view(line).empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() != 4)
            throw DataError(opt.entity_catalog_path + ":" + std::to_string(lineno) +
                            ": expected id<TAB>external-id<TAB>label<TAB>is_cvt");
        bool cvt = cols[3] == "1" || cols[3] == "true";
        EntityId id = g.intern_entity(cols[1], tsv_unescape(cols[2]), cvt);
        side.entity_by_file_id.emplace(trim(cols[0]), id);
    }

    std::ifstream rin(opt.relation_catalog_path);
    if (!rin) throw DataError("cannot read relation catalog: " + opt.relation_catalog_path);
    lineno = 0;
    while (std::getline(rin, line)) {
        ++lineno;
        if (trim_view(line).empty()) continue;
        auto cols = split(line, '\t');
        if (cols.size() != 3)
            throw DataError(opt.relation_catalog_path + ":" + std::to_string(lineno) +
                            ": expected id<TAB>external-id<TAB>label");
        RelationId id = g.intern_relation(cols[1], tsv_unescape(cols[2]));
        side.relation_by_file_id.emplace(trim(cols[0]), id);
    }
    return side;
}

}  // namespace

LoadResult load_graph_stream(std::istream& in, TripleFormat format, const LoadOptions& options) {
    LoadResult result;
    KnowledgeGraph& g = result.graph;
    LoadReport& report = result.report;

    SidecarCatalogs side;
    if (format == TripleFormat::id_coded) side = load_sidecars(g, options);

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto view = trim_view(line);
        if (view.empty()) continue;
        if (format == TripleFormat::ntriples && view.front() == '#') continue;

        bool ok = false;
        if (format == TripleFormat::id_coded) {
            RawTriple raw;
            if (split3(view, '\t', raw)) {
                auto h = side.entity_by_file_id.find(raw.head);
                auto r = side.relation_by_file_id.find(raw.relation);
                auto t = side.entity_by_file_id.find(raw.tail);
                if (h != side.entity_by_file_id.end() && r != side.relation_by_file_id.end() &&
                    t != side.entity_by_file_id.end()) {
                    g.add_triple(h->second, r->second, t->second);
                    ok = true;
                }
            }
        } else {
            RawTriple raw;
            bool parsed = format == TripleFormat::tsv    ? split3(view, '\t', raw)
                          : format == TripleFormat::pipe ? split3(view, '|', raw)
                                                         : parse_ntriples_line(view, raw);
            if (parsed) {
                EntityId h = g.intern_entity(raw.head, raw.head);
                RelationId r = g.intern_relation(raw.relation, raw.relation);
                EntityId t = g.intern_entity(raw.tail, raw.tail);
                g.add_triple(h, r, t);
                ok = true;
            }
        }
        if (!ok) {
            if (options.strict)
                throw DataError("malformed line " + std::to_string(lineno) + ": " + line);
            ++report.malformed;
        }
    }

    for (const auto& ext : options.cvt_external_ids)
        if (auto id = g.entities().by_external(ext)) g.set_cvt(*id, true);
    if (options.unlabeled_is_cvt)
        for (EntityId e = 0; e < g.entity_count(); ++e)
            if (!g.entities().has_label(e)) g.set_cvt(e, true);

    report.triples = g.triple_count();
    report.entities = g.entity_count();
    report.relations = g.relation_count();
    return result;
}

LoadResult load_graph(const std::string& path, TripleFormat format, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read triple file: " + path);
    return load_graph_stream(in, format, options);
}

std::vector<RelationId> one_hop_relations(const KnowledgeGraph& graph,
                                          std::span<const EntityId> frontier) {
    std::vector<char> seen(graph.relation_count(), 0);
    for (EntityId e : frontier) {
        for (const auto& [r, t] : graph.forward(e)) seen[r] = 1;
        for (const auto& [r, h] : graph.reverse(e)) seen[r] = 1;
    }
    std::vector<RelationId> out;
    for (RelationId r = 0; r < seen.size(); ++r)
        if (seen[r]) out.push_back(r);
    return out;
}

namespace {

std::tuple<EntityId, RelationId, std::uint64_t, std::uint64_t> prov_key(const Provenance& p) {
    return {p.from, p.first_rel,
            p.via_cvt ? static_cast<std::uint64_t>(*p.via_cvt) : ~0ull,
            p.second_rel ? static_cast<std::uint64_t>(*p.second_rel) : ~0ull};
}

}  // namespace

CandidateSet one_hop_entities(const KnowledgeGraph& graph,
                              std::span<const EntityId> frontier,
                              std::span<const RelationId> relations,
                              bool expand_cvt) {
    CandidateSet out;
    std::vector<char> rel_in(graph.relation_count(), 0);
    for (RelationId r : relations)
        if (r < rel_in.size()) rel_in[r] = 1;

    auto add = [&](EntityId e, Provenance p) { out.provenance[e].push_back(p); };

    auto reach = [&](EntityId from, RelationId rel, EntityId to) {
        if (expand_cvt && graph.is_cvt(to)) {
            for (const auto& [r2, y] : graph.forward(to))
                if (y != from && !graph.is_cvt(y)) add(y, {from, rel, to, r2});
            for (const auto& [r2, y] : graph.reverse(to))
                if (y != from && !graph.is_cvt(y)) add(y, {from, rel, to, r2});
        } else {
            add(to, {from, rel, std::nullopt, std::nullopt});
        }
    };

    for (EntityId e : frontier) {
        for (const auto& [r, t] : graph.forward(e))
            if (rel_in[r]) reach(e, r, t);
        for (const auto& [r, h] : graph.reverse(e))
            if (rel_in[r]) reach(e, r, h);
    }

    out.entities.reserve(out.provenance.size());
    for (const auto& [e, _] : out.provenance) out.entities.push_back(e);
    std::sort(out.entities.begin(), out.entities.end());
    for (auto& [e, provs] : out.provenance) {
        std::sort(provs.begin(), provs.end(),
                  [](const Provenance& a, const Provenance& b) { return prov_key(a) < prov_key(b); });
        provs.erase(std::unique(provs.begin(), provs.end()), provs.end());
    }
    return out;
}

MovieDictionary build_movie_dictionary(const KnowledgeGraph& graph, EntityId movie) {
    if (movie >= graph.entity_count())
        throw DataError("unknown movie entity id " + std::to_string(movie));
    MovieDictionary dict;
    for (const auto& [rel, tail] : graph.forward(movie)) {
        const std::string& rel_label = graph.relations().label(rel);
        std::vector<std::string>* bucket = nullptr;
        for (auto& [existing, values] : dict.entries)
            if (existing == rel_label) {
                bucket = &values;
                break;
            }
        if (!bucket) {
            dict.entries.emplace_back(rel_label, std::vector<std::string>{});
            bucket = &dict.entries.back().second;
        }
        bucket->push_back(graph.display_label(tail));
    }
    return dict;
}

}  // namespace kgqa
