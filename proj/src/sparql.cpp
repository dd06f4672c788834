#include "kgqa/sparql.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace kgqa {

const char* dialect_name(SparqlDialect d) {
    switch (d) {
        case SparqlDialect::dbpedia_2016: return "dbpedia-2016";
        case SparqlDialect::wikidata: return "wikidata";
        case SparqlDialect::kqapro_literal: return "kqapro-literal";
    }
    return "unknown";
}

std::optional<SparqlDialect> dialect_from_name(std::string_view name) {
    for (SparqlDialect d :
         {SparqlDialect::dbpedia_2016, SparqlDialect::wikidata, SparqlDialect::kqapro_literal})
        if (name == dialect_name(d)) return d;
    return std::nullopt;
}

namespace {

// Token stream over a SPARQL text that understands IRIs, quoted literals
// (with escapes and datatype/lang suffixes) and bare words/punctuation.
struct Token {
    enum class Kind { iri, prefixed, literal, variable, word, punct } kind;
    std::string text;   // iri: inside <>, literal: unquoted lexical form
    char punct = 0;
};

bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-' || c == '.';
}

std::vector<Token> tokenize_sparql(const std::string& text, bool* balanced_literals = nullptr) {
    std::vector<Token> out;
    if (balanced_literals) *balanced_literals = true;
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '#') {  // comment to end of line
            while (i < text.size() && text[i] != '\n') ++i;
            continue;
        }
        if (c == '<') {
            auto end = text.find('>', i);
            if (end == std::string::npos) {
                if (balanced_literals) *balanced_literals = false;
                return out;
            }
            out.push_back({Token::Kind::iri, text.substr(i + 1, end - i - 1), 0});
            i = end + 1;
            continue;
        }
        if (c == '"' || c == '\'') {
            char quote = c;
            std::string lit;
            ++i;
            bool closed = false;
            while (i < text.size()) {
                if (text[i] == '\\' && i + 1 < text.size()) {
                    lit += text[i + 1];
                    i += 2;
                    continue;
                }
                if (text[i] == quote) {
                    closed = true;
                    ++i;
                    break;
                }
                lit += text[i++];
            }
            if (!closed) {
                if (balanced_literals) *balanced_literals = false;
                return out;
            }
            // skip ^^<datatype> or @lang
            if (i + 1 < text.size() && text[i] == '^' && text[i + 1] == '^') {
                i += 2;
                if (i < text.size() && text[i] == '<') {
                    auto end = text.find('>', i);
                    i = end == std::string::npos ? text.size() : end + 1;
                } else {
                    while (i < text.size() && (is_name_char(text[i]) || text[i] == ':')) ++i;
                }
            } else if (i < text.size() && text[i] == '@') {
                ++i;
                while (i < text.size() && (is_name_char(text[i]))) ++i;
            }
            out.push_back({Token::Kind::literal, std::move(lit), 0});
            continue;
        }
        if (c == '?' || c == '$') {
            std::size_t start = i++;
            while (i < text.size() && is_name_char(text[i])) ++i;
            out.push_back({Token::Kind::variable, text.substr(start, i - start), 0});
            continue;
        }
        if (is_name_char(c)) {
            std::size_t start = i;
            while (i < text.size() && is_name_char(text[i])) ++i;
            if (i < text.size() && text[i] == ':') {
                // prefixed name prefix:local
                std::size_t mid = i++;
                std::size_t local_start = i;
                while (i < text.size() && is_name_char(text[i])) ++i;
                if (i > local_start) {
                    out.push_back({Token::Kind::prefixed, text.substr(start, i - start), 0});
                } else {
                    // bare "prefix:" as in a PREFIX declaration
                    out.push_back({Token::Kind::word, text.substr(start, mid - start), 0});
                    out.push_back({Token::Kind::punct, ":", ':'});
                }
                continue;
            }
            out.push_back({Token::Kind::word, text.substr(start, i - start), 0});
            continue;
        }
        out.push_back({Token::Kind::punct, std::string(1, c), c});
        ++i;
    }
    return out;
}

bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    return starts_with_icase(a, b);
}

const std::set<std::string>& well_known_prefixes() {
    static const std::set<std::string> known = {
        "wd",  "wdt", "p",    "ps",   "pq",  "psv",  "pr",   "prov", "rdf",  "rdfs",
        "xsd", "owl", "skos", "foaf", "dct", "dbo",  "dbp",  "dbr",  "res",  "dc",
        "bd",  "wikibase", "pred", "yago", "dbc", "dbpedia2", "geo"};
    return known;
}

}  // namespace

ValidationResult validate_sparql(const std::string& text) {
    if (trim_view(text).empty()) return {false, "empty query"};

    bool literals_ok = true;
    auto tokens = tokenize_sparql(text, &literals_ok);
    if (!literals_ok) return {false, "unterminated IRI or string literal"};

    // balanced delimiters
    std::vector<char> stack;
    for (const auto& t : tokens) {
        if (t.kind != Token::Kind::punct) continue;
        switch (t.punct) {
            case '{':
            case '(':
            case '[': stack.push_back(t.punct); break;
            case '}':
                if (stack.empty() || stack.back() != '{') return {false, "unbalanced '}'"};
                stack.pop_back();
                break;
            case ')':
                if (stack.empty() || stack.back() != '(') return {false, "unbalanced ')'"};
                stack.pop_back();
                break;
            case ']':
                if (stack.empty() || stack.back() != '[') return {false, "unbalanced ']'"};
                stack.pop_back();
                break;
            default: break;
        }
    }
    if (!stack.empty()) return {false, std::string("unclosed '") + stack.back() + "'"};

    // exactly one query form keyword
    std::size_t form_count = 0;
    std::string form;
    std::size_t form_index = 0;
    std::set<std::string> declared_prefixes;
    for (std::size_t idx = 0; idx < tokens.size(); ++idx) {
        const auto& t = tokens[idx];
        if (t.kind != Token::Kind::word) continue;
        for (std::string_view kw : {"select", "ask", "construct", "describe"}) {
            if (iequals(t.text, kw)) {
                ++form_count;
                if (form.empty()) {
                    form = to_lower(t.text);
                    form_index = idx;
                }
            }
        }
        if (iequals(t.text, "prefix") && idx + 1 < tokens.size()) {
            const auto& next = tokens[idx + 1];
            if (next.kind == Token::Kind::word) declared_prefixes.insert(to_lower(next.text));
        }
    }
    if (form_count == 0) return {false, "no query form keyword (SELECT/ASK/...)"};
    if (form_count > 1) return {false, "more than one query form keyword"};

    bool has_brace = std::any_of(tokens.begin(), tokens.end(), [](const Token& t) {
        return t.kind == Token::Kind::punct && t.punct == '{';
    });
    if (!has_brace) return {false, "missing brace-delimited body"};

    if (form == "select") {
        // projection between SELECT and the body
        bool projection = false;
        for (std::size_t idx = form_index + 1; idx < tokens.size(); ++idx) {
            const auto& t = tokens[idx];
            if (t.kind == Token::Kind::punct && t.punct == '{') break;
            if (t.kind == Token::Kind::variable) projection = true;
            if (t.kind == Token::Kind::punct && t.punct == '*') projection = true;
            if (t.kind == Token::Kind::word &&
                (iequals(t.text, "count") || iequals(t.text, "sum") || iequals(t.text, "avg") ||
                 iequals(t.text, "min") || iequals(t.text, "max")))
                projection = true;
        }
        if (!projection) return {false, "SELECT without projection"};

        // non-empty body for SELECT
        auto open = text.find('{');
        auto close = text.rfind('}');
        if (open == std::string::npos || close == std::string::npos || close <= open + 1 ||
            trim_view(std::string_view(text).substr(open + 1, close - open - 1)).empty())
            return {false, "SELECT with empty body"};
    }

    // every used prefix must be declared or well known
    for (const auto& t : tokens) {
        if (t.kind != Token::Kind::prefixed) continue;
        auto colon = t.text.find(':');
        std::string prefix = to_lower(t.text.substr(0, colon));
        if (!declared_prefixes.count(prefix) && !well_known_prefixes().count(prefix))
            return {false, "undeclared prefix '" + prefix + ":'"};
    }
    return {true, ""};
}

SparqlForm sparql_form(const std::string& text) {
    auto tokens = tokenize_sparql(text);
    bool has_count = false;
    std::string form;
    for (const auto& t : tokens) {
        if (t.kind != Token::Kind::word) continue;
        if (iequals(t.text, "count")) has_count = true;
        if (form.empty())
            for (std::string_view kw : {"select", "ask", "construct", "describe"})
                if (iequals(t.text, kw)) form = std::string(kw);
    }
    if (form == "ask") return SparqlForm::ask;
    if (form == "select") return has_count ? SparqlForm::count : SparqlForm::select;
    if (form.empty()) return SparqlForm::other;
    return SparqlForm::other;
}

namespace {

struct NamespaceTable {
    std::set<std::string> entity_prefixes;
    std::set<std::string> predicate_prefixes;
    std::vector<std::pair<std::string, bool>> iri_namespaces;  // (prefix, is_entity)
};

const NamespaceTable& namespaces_for(SparqlDialect dialect) {
    static const NamespaceTable wikidata{
        {"wd"},
        {"wdt", "p", "ps", "pq", "psv", "pr", "prov"},
        {{"http://www.wikidata.org/entity/", true}, {"http://www.wikidata.org/prop/", false}},
    };
    static const NamespaceTable dbpedia{
        {"dbr", "res", "dbc"},
        {"dbo", "dbp", "rdf", "rdfs", "foaf", "dct", "skos", "owl", "yago", "dbpedia2", "geo"},
        {{"http://dbpedia.org/resource/", true},
         {"http://dbpedia.org/ontology/", false},
         {"http://dbpedia.org/property/", false},
         {"http://www.w3.org/1999/02/22-rdf-syntax-ns#", false},
         {"http://www.w3.org/2000/01/rdf-schema#", false}},
    };
    static const NamespaceTable kqapro{
        {},
        {"pred"},
        {{"pred:", false}},
    };
    switch (dialect) {
        case SparqlDialect::wikidata: return wikidata;
        case SparqlDialect::dbpedia_2016: return dbpedia;
        case SparqlDialect::kqapro_literal: return kqapro;
    }
    return wikidata;
}

std::string local_name(const std::string& iri) {
    auto hash = iri.rfind('#');
    if (hash != std::string::npos && hash + 1 < iri.size()) return iri.substr(hash + 1);
    auto slash = iri.rfind('/');
    if (slash != std::string::npos && slash + 1 < iri.size()) return iri.substr(slash + 1);
    return iri;
}

void push_unique(std::vector<std::string>& out, const std::string& v) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
}

}  // namespace

SparqlTerms extract_terms_from_sparql(const std::string& text, SparqlDialect dialect) {
    auto valid = validate_sparql(text);
    if (!valid.ok) throw DataError("cannot extract terms from invalid query: " + valid.message);

    const NamespaceTable& ns = namespaces_for(dialect);
    SparqlTerms terms;

    auto tokens = tokenize_sparql(text);
    int paren_depth = 0;
    int brace_depth = 0;
    int values_brace_depth = -1;  // brace depth at which a VALUES block opened
    bool skip_prefix_decl = false;

    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        if (t.kind == Token::Kind::word && iequals(t.text, "prefix")) {
            skip_prefix_decl = true;  // PREFIX foo: <iri> — the IRI is not a term
            continue;
        }
        if (t.kind == Token::Kind::punct) {
            switch (t.punct) {
                case '(': ++paren_depth; break;
                case ')': --paren_depth; break;
                case '{':
                    ++brace_depth;
                    break;
                case '}':
                    --brace_depth;
                    if (values_brace_depth >= 0 && brace_depth < values_brace_depth)
                        values_brace_depth = -1;
                    break;
                default: break;
            }
            continue;
        }
        if (t.kind == Token::Kind::word && iequals(t.text, "values")) {
            values_brace_depth = brace_depth + 1;
            continue;
        }

        if (t.kind == Token::Kind::iri) {
            if (skip_prefix_decl) {
                skip_prefix_decl = false;
                continue;
            }
            bool classified = false;
            for (const auto& [prefix, is_entity] : ns.iri_namespaces) {
                if (t.text.rfind(prefix, 0) == 0) {
                    std::string id = dialect == SparqlDialect::kqapro_literal
                                         ? t.text
                                         : local_name(t.text);
                    push_unique(is_entity ? terms.entities : terms.predicates, id);
                    classified = true;
                    break;
                }
            }
            (void)classified;
            continue;
        }
        if (t.kind == Token::Kind::prefixed) {
            auto colon = t.text.find(':');
            std::string prefix = to_lower(t.text.substr(0, colon));
            std::string local = t.text.substr(colon + 1);
            if (ns.entity_prefixes.count(prefix)) {
                push_unique(terms.entities, local);
            } else if (ns.predicate_prefixes.count(prefix)) {
                push_unique(terms.predicates,
                            dialect == SparqlDialect::kqapro_literal ? t.text : local);
            }
            continue;
        }
        if (t.kind == Token::Kind::literal) {
            // triple-position literals are entity surface forms; literals in
            // FILTER/BIND parentheses or VALUES blocks are not
            bool in_values = values_brace_depth >= 0 && brace_depth >= values_brace_depth;
            if (brace_depth >= 1 && paren_depth == 0 && !in_values && !t.text.empty())
                push_unique(terms.entities, t.text);
            continue;
        }
    }
    return terms;
}

SparqlQuery make_sparql_query(const std::string& text, SparqlDialect dialect) {
    auto valid = validate_sparql(text);
    if (!valid.ok) throw DataError("invalid SPARQL: " + valid.message);
    SparqlQuery q;
    q.text = text;
    q.form = sparql_form(text);
    q.extracted_terms = extract_terms_from_sparql(text, dialect);
    return q;
}

BindingSet parse_sparql_results_json(const std::string& body) {
    auto json = nlohmann::json::parse(body, nullptr, false);
    if (json.is_discarded()) throw DataError("endpoint returned malformed results JSON");

    BindingSet out;
    if (json.contains("boolean") && json["boolean"].is_boolean()) {
        out.boolean = json["boolean"].get<bool>();
        return out;
    }
    if (json.contains("head") && json["head"].contains("vars"))
        for (const auto& v : json["head"]["vars"]) out.variables.push_back(v.get<std::string>());

    if (!json.contains("results") || !json["results"].contains("bindings"))
        throw DataError("results JSON missing results.bindings");

    static const std::set<std::string> numeric_types = {
        "integer", "decimal", "double", "float", "int", "long", "short",
        "nonNegativeInteger", "positiveInteger", "unsignedInt", "byte"};

    for (const auto& row : json["results"]["bindings"]) {
        std::map<std::string, BoundValue> parsed;
        for (auto it = row.begin(); it != row.end(); ++it) {
            const auto& cell = it.value();
            BoundValue value;
            value.value = cell.value("value", "");
            std::string type = cell.value("type", "literal");
            std::string datatype = local_name(cell.value("datatype", ""));
            if (type == "uri") {
                value.kind = BoundValue::Kind::iri;
            } else if (datatype == "boolean") {
                value.kind = BoundValue::Kind::boolean;
            } else if (numeric_types.count(datatype)) {
                value.kind = BoundValue::Kind::number;
            } else {
                value.kind = BoundValue::Kind::literal;
            }
            parsed.emplace(it.key(), std::move(value));
        }
        out.rows.push_back(std::move(parsed));
    }
    return out;
}

std::vector<std::string> bindings_to_answers(const BindingSet& bindings) {
    std::vector<std::string> out;
    if (bindings.boolean.has_value()) {
        out.push_back(*bindings.boolean ? "true" : "false");
        return out;
    }
    for (const auto& row : bindings.rows) {
        auto add = [&](const BoundValue& v) {
            std::string s = v.kind == BoundValue::Kind::iri ? local_name(v.value) : v.value;
            push_unique(out, s);
        };
        if (bindings.variables.empty()) {
            for (const auto& [var, v] : row) add(v);
        } else {
            for (const auto& var : bindings.variables) {
                auto it = row.find(var);
                if (it != row.end()) add(it->second);
            }
        }
    }
    return out;
}

HttpSparqlEndpoint::HttpSparqlEndpoint(std::string base_url, std::string path, int timeout_seconds)
    : base_url_(std::move(base_url)), path_(std::move(path)), timeout_seconds_(timeout_seconds) {}

ExecutionResult HttpSparqlEndpoint::execute(const std::string& query) {
    ++executions_;
    httplib::Client client(base_url_);
    client.set_read_timeout(timeout_seconds_, 0);
    client.set_connection_timeout(timeout_seconds_, 0);

    httplib::Params params{{"query", query}};
    httplib::Headers headers{{"Accept", "application/sparql-results+json"}};
    auto res = client.Get(path_, params, headers);

    ExecutionResult result;
    if (!res) {
        result.error_message = "endpoint unreachable: " + base_url_;
        result.retryable = true;
        return result;
    }
    if (res->status != 200) {
        result.error_message = res->body;
        result.retryable = res->status >= 500;
        return result;
    }
    try {
        result.bindings = parse_sparql_results_json(res->body);
        result.ok = true;
    } catch (const DataError& e) {
        result.error_message = e.what();
    }
    return result;
}

std::string MockSparqlEndpoint::normalize_query(const std::string& query) {
    std::string out;
    bool in_space = true;
    for (char c : query) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out += ' ';
            in_space = true;
        } else {
            out += c;
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::shared_ptr<MockSparqlEndpoint> MockSparqlEndpoint::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read mock endpoint fixture: " + path);
    auto json = nlohmann::json::parse(in, nullptr, false);
    if (json.is_discarded() || !json.is_object())
        throw DataError("mock endpoint fixture must be a JSON object: " + path);

    auto mock = std::make_shared<MockSparqlEndpoint>();
    for (auto& [query, value] : json.items()) {
        if (value.is_object() && value.contains("error")) {
            const auto& err = value["error"];
            mock->add_error(query, err.value("message", "error"), err.value("retryable", false));
        } else {
            mock->add_result(query, value.dump());
        }
    }
    return mock;
}

void MockSparqlEndpoint::add_result(const std::string& query, const std::string& results_json) {
    std::lock_guard lock(mutex_);
    entries_[normalize_query(query)] = {false, results_json, false};
}

void MockSparqlEndpoint::add_error(const std::string& query, const std::string& message,
                                   bool retryable) {
    std::lock_guard lock(mutex_);
    entries_[normalize_query(query)] = {true, message, retryable};
}

ExecutionResult MockSparqlEndpoint::execute(const std::string& query) {
    std::lock_guard lock(mutex_);
    ++executions_;
    ExecutionResult result;
    auto it = entries_.find(normalize_query(query));
    if (it == entries_.end()) {
        result.error_message = "no fixture for query: " + normalize_query(query);
        return result;
    }
    if (it->second.is_error) {
        result.error_message = it->second.payload;
        result.retryable = it->second.retryable;
        return result;
    }
    result.bindings = parse_sparql_results_json(it->second.payload);
    result.ok = true;
    return result;
}

std::size_t MockSparqlEndpoint::executions() const {
    std::lock_guard lock(mutex_);
    return executions_;
}

}  // namespace kgqa
