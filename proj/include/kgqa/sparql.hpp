#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

enum class SparqlForm { select, ask, count, other };
enum class SparqlDialect { dbpedia_2016, wikidata, kqapro_literal };

const char* dialect_name(SparqlDialect d);
std::optional<SparqlDialect> dialect_from_name(std::string_view name);

struct SparqlTerms {
    std::vector<std::string> entities;
    std::vector<std::string> predicates;

    friend bool operator==(const SparqlTerms&, const SparqlTerms&) = default;
};

struct SparqlQuery {
    std::string text;
    SparqlTerms extracted_terms;
    SparqlForm form = SparqlForm::other;
};

struct ValidationResult {
    bool ok = false;
    std::string message;
};

// Structural checks only: balanced delimiters outside literals, exactly one
// query-form keyword, a brace-delimited body (SELECT needs projection and a
// non-empty body; ASK {} is fine), and every used prefix either declared or
// well known. The endpoint stays the final arbiter.
ValidationResult validate_sparql(const std::string& text);

SparqlForm sparql_form(const std::string& text);

// Namespace-classified IRIs plus quoted literals in triple positions
// (entity surface forms). Requires a structurally valid query.
SparqlTerms extract_terms_from_sparql(const std::string& text, SparqlDialect dialect);

// validate + classify form + extract terms
SparqlQuery make_sparql_query(const std::string& text, SparqlDialect dialect);

struct BoundValue {
    enum class Kind { iri, literal, boolean, number } kind = Kind::literal;
    std::string value;

    friend bool operator==(const BoundValue&, const BoundValue&) = default;
};

struct BindingSet {
    std::vector<std::string> variables;
    std::vector<std::map<std::string, BoundValue>> rows;
    std::optional<bool> boolean;  // ASK result
};

// standard SPARQL results JSON: head.vars + results.bindings type/value
BindingSet parse_sparql_results_json(const std::string& body);

// iri values project to their trailing id segment; literals keep their text
std::vector<std::string> bindings_to_answers(const BindingSet& bindings);

struct ExecutionResult {
    bool ok = false;
    BindingSet bindings;
    std::string error_message;  // endpoint text, verbatim
    bool retryable = false;
};

class SparqlEndpoint {
public:
    virtual ~SparqlEndpoint() = default;
    virtual ExecutionResult execute(const std::string& query) = 0;
    virtual std::size_t executions() const = 0;
};

// SPARQL protocol over HTTP with JSON results.
class HttpSparqlEndpoint : public SparqlEndpoint {
public:
    HttpSparqlEndpoint(std::string base_url, std::string path, int timeout_seconds = 60);
    ExecutionResult execute(const std::string& query) override;
    std::size_t executions() const override { return executions_; }

private:
    std::string base_url_;
    std::string path_;
    int timeout_seconds_;
    std::size_t executions_ = 0;
};

// Fixture-driven endpoint: normalized query text -> results JSON or error.
// Fixture file: {"<query>": <results object>} or {"<query>": {"error":
// {"message": "...", "retryable": false}}}.
class MockSparqlEndpoint : public SparqlEndpoint {
public:
    MockSparqlEndpoint() = default;
    static std::shared_ptr<MockSparqlEndpoint> from_file(const std::string& path);

    static std::string normalize_query(const std::string& query);

    void add_result(const std::string& query, const std::string& results_json);
    void add_error(const std::string& query, const std::string& message, bool retryable = false);

    ExecutionResult execute(const std::string& query) override;
    std::size_t executions() const override;

private:
    struct Entry {
        bool is_error = false;
        std::string payload;  // results JSON or error message
        bool retryable = false;
    };
    mutable std::mutex mutex_;
    std::map<std::string, Entry> entries_;
    std::size_t executions_ = 0;
};

}  // namespace kgqa
