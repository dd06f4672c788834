#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kgqa/sp_pipeline.hpp"

using namespace kgqa;
namespace fs = std::filesystem;

namespace {

TermCatalog entity_catalog() {
    TermCatalog c(TermKind::entity);
    c.add("Q42", "Douglas Adams: English author");
    c.add("Q5", "human: common taxon of Homo sapiens");
    c.add("Q155", "Brazil: country in South America");
    return c;
}

TermCatalog predicate_catalog() {
    TermCatalog c(TermKind::predicate);
    c.add("P31", "instance of: that class of which this subject is an example");
    c.add("P19", "place of birth: most specific known birth location");
    return c;
}

const std::string kResultsQ42 =
    R"({"head":{"vars":["x"]},"results":{"bindings":[
        {"x":{"type":"uri","value":"http://www.wikidata.org/entity/Q42"}}]}})";

}  // namespace

TEST_CASE("term catalog stores entries in order and updates duplicates") {
    auto c = entity_catalog();
    CHECK(c.size() == 3);
    REQUIRE(c.find("Q42") != nullptr);
    CHECK(c.find("Q42")->description.rfind("Douglas", 0) == 0);
    c.add("Q42", "updated");
    CHECK(c.size() == 3);
    CHECK(c.find("Q42")->description == "updated");
    CHECK(c.find("Q999") == nullptr);
}

TEST_CASE("term catalog cache round-trips through the TSV format") {
    auto path = fs::temp_directory_path() / "kgqa_terms.tsv";
    {
        std::ofstream out(path);
        out << "Q1\tentity\tfirst entity\n"
            << "P1\tpredicate\tfirst predicate\n"
            << "Q2\tentity\twith\\ttab\n";
    }
    auto entities = TermCatalog::load_cache(path.string(), TermKind::entity);
    CHECK(entities.size() == 2);
    CHECK(entities.find("Q2")->description == "with\ttab");
    auto predicates = TermCatalog::load_cache(path.string(), TermKind::predicate);
    CHECK(predicates.size() == 1);

    SUBCASE("missing cache file is an empty catalog") {
        auto empty = TermCatalog::load_cache("/no/such/cache.tsv", TermKind::entity);
        CHECK(empty.size() == 0);
    }
}

TEST_CASE("identify_entities selects retrieved ids only, with feedback") {
    auto scripted = std::make_shared<ScriptedBackend>();
    auto mock = std::make_shared<MockSparqlEndpoint>();
    SpConfig cfg;
    cfg.k_entities = 2;

    SUBCASE("scripted backend picks a retrieved id") {
        scripted->add_response("entity-identify|who is Douglas Adams", "Q42");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), cfg);
        RunContext ctx;
        auto ids = sp.identify_entities("who is Douglas Adams", ctx);
        CHECK(ids == std::vector<std::string>{"Q42"});
        CHECK(ctx.llm_calls == 1);
    }
    SUBCASE("an unretrieved id draws feedback, then the corrected id is kept") {
        scripted->add_sequence("entity-identify|who is Douglas Adams", {"Q9999", "Q42"});
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), cfg);
        RunContext ctx;
        auto ids = sp.identify_entities("who is Douglas Adams", ctx);
        CHECK(ids == std::vector<std::string>{"Q42"});
        CHECK(ctx.llm_calls == 2);
        bool feedback_attempt = false;
        for (const auto& r : ctx.trace)
            if (r.skill == "entity-identify" && r.attempt == 1) feedback_attempt = true;
        CHECK(feedback_attempt);
    }
    SUBCASE("empty selection after retries is a skill failure") {
        scripted->add_response("entity-identify|who is Douglas Adams", "Q9999");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), cfg);
        RunContext ctx;
        auto ids = sp.identify_entities("who is Douglas Adams", ctx);
        CHECK(ids.empty());
        CHECK(ctx.llm_calls == 1 + cfg.retries);
    }
    SUBCASE("known entities bypass retrieval with zero LLM calls") {
        cfg.known_entities = std::vector<std::string>{"Q42", "Q5"};
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), cfg);
        RunContext ctx;
        auto ids = sp.identify_entities("who is Douglas Adams", ctx);
        CHECK(ids == std::vector<std::string>{"Q42", "Q5"});
        CHECK(ctx.llm_calls == 0);
        REQUIRE(ctx.trace.size() == 1);
        CHECK(ctx.trace[0].note == "known-entities");
    }
    SUBCASE("k covering the catalog offers every id") {
        cfg.k_entities = 10;
        // key carries all three catalog ids as sorted context ids
        scripted->add_response("entity-identify|q|Q155,Q42,Q5", "Q155");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), cfg);
        RunContext ctx;
        auto ids = sp.identify_entities("q", ctx);
        CHECK(ids == std::vector<std::string>{"Q155"});
    }
}

TEST_CASE("identify_predicates mirrors the entity flow") {
    auto scripted = std::make_shared<ScriptedBackend>();
    scripted->add_response("predicate-identify|where was X born", "P19");
    SpPipeline sp(std::make_shared<LlmGateway>(scripted), std::make_shared<MockSparqlEndpoint>(),
                  entity_catalog(), predicate_catalog(), {});
    RunContext ctx;
    auto ids = sp.identify_predicates("where was X born", ctx);
    CHECK(ids == std::vector<std::string>{"P19"});
}

TEST_CASE("generate_sparql validates structurally and retries with feedback") {
    auto scripted = std::make_shared<ScriptedBackend>();
    auto mock = std::make_shared<MockSparqlEndpoint>();

    SUBCASE("valid query on the first try") {
        scripted->add_response("sparql-generate|q", "SELECT ?x WHERE { wd:Q42 wdt:P31 ?x }");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), {});
        RunContext ctx;
        auto q = sp.generate_sparql("q", {"Q42"}, {"P31"}, {}, ctx);
        REQUIRE(q.has_value());
        CHECK(q->form == SparqlForm::select);
        CHECK(q->extracted_terms.entities == std::vector<std::string>{"Q42"});
        CHECK(ctx.llm_calls == 1);
    }
    SUBCASE("unbalanced braces then a valid query costs one retry") {
        scripted->add_sequence("sparql-generate|q",
                               {"SELECT ?x WHERE { wd:Q42 wdt:P31 ?x",
                                "SELECT ?x WHERE { wd:Q42 wdt:P31 ?x }"});
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), {});
        RunContext ctx;
        auto q = sp.generate_sparql("q", {"Q42"}, {"P31"}, {}, ctx);
        REQUIRE(q.has_value());
        CHECK(ctx.llm_calls == 2);
    }
    SUBCASE("prose-wrapped query is extracted") {
        scripted->add_response("sparql-generate|q",
                               "Here is the query: SELECT ?x WHERE { wd:Q42 wdt:P31 ?x }");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), {});
        RunContext ctx;
        auto q = sp.generate_sparql("q", {"Q42"}, {"P31"}, {}, ctx);
        REQUIRE(q.has_value());
        CHECK(q->text.rfind("SELECT", 0) == 0);
    }
    SUBCASE("never-valid output is a skill failure with no execution") {
        scripted->add_response("sparql-generate|q", "I cannot write that query");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), {});
        RunContext ctx;
        auto q = sp.generate_sparql("q", {"Q42"}, {"P31"}, {}, ctx);
        CHECK_FALSE(q.has_value());
        CHECK(mock->executions() == 0);
    }
}

TEST_CASE("run_sp composes the three skills against the endpoint") {
    const std::string question = "what is Douglas Adams an instance of";
    const std::string good_query = "SELECT ?x WHERE { wd:Q42 wdt:P31 ?x }";

    auto scripted = std::make_shared<ScriptedBackend>();
    scripted->add_response("entity-identify|" + question, "Q42");
    scripted->add_response("predicate-identify|" + question, "P31");

    auto mock = std::make_shared<MockSparqlEndpoint>();
    mock->add_result(good_query, kResultsQ42);

    SUBCASE("gold path first try") {
        scripted->add_response("sparql-generate|" + question, good_query);
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), {});
        auto result = sp.run(question);
        CHECK(result.accepted);
        CHECK(result.answers == std::vector<std::string>{"Q42"});
        CHECK(result.llm_calls == 3);
        CHECK(mock->executions() == 1);
    }
    SUBCASE("execution error feeds back and the corrected query wins") {
        const std::string bad_query = "SELECT ?x WHERE { wd:Q42 wdt:P9999 ?x }";
        scripted->add_sequence("sparql-generate|" + question, {bad_query, good_query});
        mock->add_error(bad_query, "Unknown property P9999");
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), {});
        auto result = sp.run(question);
        CHECK(result.accepted);
        CHECK(mock->executions() == 2);
        bool fed_back = false;
        for (const auto& r : result.trace)
            if (r.note == "execution-error" && !r.outputs.empty() &&
                r.outputs[0].find("P9999") != std::string::npos)
                fed_back = true;
        CHECK(fed_back);
    }
    SUBCASE("persistent endpoint errors stop after 1+retries executions") {
        const std::string bad_query = "SELECT ?x WHERE { wd:Q42 wdt:P9999 ?x }";
        scripted->add_response("sparql-generate|" + question, bad_query);
        mock->add_error(bad_query, "Unknown property P9999");
        SpConfig cfg;
        SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                      predicate_catalog(), cfg);
        auto result = sp.run(question);
        CHECK_FALSE(result.accepted);
        CHECK(mock->executions() == static_cast<std::size_t>(1 + cfg.retries));
    }
    SUBCASE("known entities produce byte-identical predicate and generation traces") {
        scripted->add_response("sparql-generate|" + question, good_query);
        SpPipeline identified(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                              predicate_catalog(), {});
        auto run_a = identified.run(question);

        auto scripted2 = std::make_shared<ScriptedBackend>();
        scripted2->add_response("predicate-identify|" + question, "P31");
        scripted2->add_response("sparql-generate|" + question, good_query);
        SpConfig cfg;
        cfg.known_entities = std::vector<std::string>{"Q42"};
        SpPipeline known(std::make_shared<LlmGateway>(scripted2), mock, entity_catalog(),
                         predicate_catalog(), cfg);
        auto run_b = known.run(question);

        auto stage_records = [](const AnswerSet& r) {
            std::vector<std::string> out;
            for (const auto& t : r.trace)
                if (t.skill == "predicate-identify" || t.skill == "sparql-generate")
                    out.push_back(to_json_line(t));
            return out;
        };
        CHECK(run_b.llm_calls == 2);  // no entity-identification call
        CHECK(stage_records(run_a) == stage_records(run_b));
    }
}

TEST_CASE("empty bindings are not an accepted answer") {
    const std::string question = "q";
    const std::string query = "SELECT ?x WHERE { wd:Q1 wdt:P1 ?x }";
    auto scripted = std::make_shared<ScriptedBackend>();
    scripted->add_response("entity-identify|q", "Q42");
    scripted->add_response("predicate-identify|q", "P31");
    scripted->add_response("sparql-generate|q", query);
    auto mock = std::make_shared<MockSparqlEndpoint>();
    mock->add_result(query, R"({"head":{"vars":["x"]},"results":{"bindings":[]}})");

    SpPipeline sp(std::make_shared<LlmGateway>(scripted), mock, entity_catalog(),
                  predicate_catalog(), {});
    auto result = sp.run(question);
    CHECK_FALSE(result.accepted);
    CHECK(result.answers.empty());
}

TEST_CASE("term extraction round-trips over a fixture corpus") {
    std::vector<std::pair<std::string, SparqlDialect>> queries = {
        {"SELECT ?x WHERE { wd:Q42 wdt:P31 ?x }", SparqlDialect::wikidata},
        {"ASK { wd:Q155 wdt:P30 wd:Q18 }", SparqlDialect::wikidata},
        {"SELECT ?x WHERE { \"Georgia national football team\" <pred:instance_of> ?x }",
         SparqlDialect::kqapro_literal},
        {"SELECT ?u WHERE { res:Berlin dbo:country ?u }", SparqlDialect::dbpedia_2016},
    };
    for (const auto& [text, dialect] : queries) {
        auto first = extract_terms_from_sparql(text, dialect);
        auto second = extract_terms_from_sparql(text, dialect);
        CHECK(first == second);
        // re-extraction from the same query finds exactly the corpus terms
        for (const auto& e : first.entities) CHECK_FALSE(e.empty());
        for (const auto& p : first.predicates) CHECK_FALSE(p.empty());
    }
}
