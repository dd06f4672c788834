#include "kgqa/dataset_loaders.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace kgqa {

const char* dataset_name(Dataset d) {
    switch (d) {
        case Dataset::webqsp: return "webqsp";
        case Dataset::metaqa3: return "metaqa3";
        case Dataset::cwq: return "cwq";
        case Dataset::lcquad1: return "lcquad1";
        case Dataset::lcquad2: return "lcquad2";
        case Dataset::kqapro: return "kqapro";
    }
    return "unknown";
}

std::optional<Dataset> dataset_from_name(std::string_view name) {
    for (Dataset d : {Dataset::webqsp, Dataset::metaqa3, Dataset::cwq, Dataset::lcquad1,
                      Dataset::lcquad2, Dataset::kqapro})
        if (name == dataset_name(d)) return d;
    return std::nullopt;
}

namespace {

using nlohmann::json;

json parse_json_file(const std::string& path, const char* dataset) {
    std::ifstream in(path);
    if (!in) throw DataError(std::string(dataset) + ": cannot read " + path);
    auto parsed = json::parse(in, nullptr, false);
    if (parsed.is_discarded()) throw DataError(std::string(dataset) + ": invalid JSON in " + path);
    return parsed;
}

[[noreturn]] void missing_field(const char* dataset, std::size_t index, const char* field) {
    throw DataError(std::string(dataset) + ": record " + std::to_string(index) + " missing '" +
                    field + "'");
}

std::string require_string(const json& record, const char* dataset, std::size_t index,
                           const char* field) {
    if (!record.contains(field) || !record[field].is_string())
        missing_field(dataset, index, field);
    return record[field].get<std::string>();
}

std::string id_to_string(const json& value) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number_integer()) return std::to_string(value.get<long long>());
    return value.dump();
}

std::vector<QuestionInstance> load_webqsp(const std::string& path) {
    auto root = parse_json_file(path, "webqsp");
    if (!root.contains("Questions") || !root["Questions"].is_array())
        throw DataError("webqsp: top-level 'Questions' array missing");

    std::vector<QuestionInstance> out;
    std::size_t index = 0;
    for (const auto& record : root["Questions"]) {
        QuestionInstance q;
        q.dataset = "webqsp";
        q.id = require_string(record, "webqsp", index, "QuestionId");
        q.question = require_string(record, "webqsp", index, "RawQuestion");
        if (!record.contains("Parses") || !record["Parses"].is_array() ||
            record["Parses"].empty())
            missing_field("webqsp", index, "Parses");
        const auto& parse = record["Parses"][0];  // first parse, by convention
        if (parse.contains("TopicEntityMid") && parse["TopicEntityMid"].is_string())
            q.topic_entities.push_back(parse["TopicEntityMid"].get<std::string>());
        if (parse.contains("TopicEntityName") && parse["TopicEntityName"].is_string())
            q.extras["topic_entity_name"] = parse["TopicEntityName"].get<std::string>();
        if (parse.contains("Sparql") && parse["Sparql"].is_string())
            q.gold_sparql = parse["Sparql"].get<std::string>();
        if (parse.contains("Answers") && parse["Answers"].is_array()) {
            for (const auto& answer : parse["Answers"]) {
                if (answer.contains("EntityName") && answer["EntityName"].is_string())
                    q.gold_answers.push_back(answer["EntityName"].get<std::string>());
                else if (answer.contains("AnswerArgument") &&
                         answer["AnswerArgument"].is_string())
                    q.gold_answers.push_back(answer["AnswerArgument"].get<std::string>());
            }
        }
        out.push_back(std::move(q));
        ++index;
    }
    return out;
}

std::string qtype_path_for(const std::string& qa_path) {
    const std::string suffix = ".txt";
    if (qa_path.size() > suffix.size() &&
        qa_path.compare(qa_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return qa_path.substr(0, qa_path.size() - suffix.size()) + "_qtype.txt";
    return qa_path + "_qtype";
}

std::vector<QuestionInstance> load_metaqa3(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("metaqa3: cannot read " + path);

    std::vector<std::string> path_types;
    if (std::ifstream qtype(qtype_path_for(path)); qtype) {
        std::string line;
        while (std::getline(qtype, line)) path_types.push_back(trim(line));
    }

    std::vector<QuestionInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        if (trim_view(line).empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("metaqa3: line " + std::to_string(lineno + 1) +
                            " missing 'answers' column");
        QuestionInstance q;
        q.dataset = "metaqa3";
        q.id = "metaqa3-" + std::to_string(lineno + 1);
        q.question = line.substr(0, tab);
        for (const auto& a : split(line.substr(tab + 1), '|'))
            if (!trim(a).empty()) q.gold_answers.push_back(trim(a));
        if (q.gold_answers.empty())
            throw DataError("metaqa3: line " + std::to_string(lineno + 1) + " has empty answers");

        auto open = q.question.find('[');
        auto close = q.question.find(']');
        if (open == std::string::npos || close == std::string::npos || close <= open)
            throw DataError("metaqa3: line " + std::to_string(lineno + 1) +
                            " missing [topic entity] brackets");
        q.topic_entities.push_back(q.question.substr(open + 1, close - open - 1));
        if (lineno < path_types.size() && !path_types[lineno].empty())
            q.extras["path_type"] = path_types[lineno];
        out.push_back(std::move(q));
        ++lineno;
    }
    return out;
}

std::vector<QuestionInstance> load_cwq(const std::string& path) {
    auto root = parse_json_file(path, "cwq");
    if (!root.is_array()) throw DataError("cwq: expected a top-level JSON array");

    std::vector<QuestionInstance> out;
    std::size_t index = 0;
    for (const auto& record : root) {
        QuestionInstance q;
        q.dataset = "cwq";
        q.id = require_string(record, "cwq", index, "ID");
        q.question = require_string(record, "cwq", index, "question");
        if (!record.contains("answers") || !record["answers"].is_array())
            missing_field("cwq", index, "answers");
        for (const auto& answer : record["answers"]) {
            if (answer.contains("answer") && answer["answer"].is_string())
                q.gold_answers.push_back(answer["answer"].get<std::string>());
            if (answer.contains("aliases") && answer["aliases"].is_array())
                for (const auto& alias : answer["aliases"])
                    if (alias.is_string()) q.gold_answers.push_back(alias.get<std::string>());
        }
        if (record.contains("sparql") && record["sparql"].is_string())
            q.gold_sparql = record["sparql"].get<std::string>();
        if (record.contains("machine_question") && record["machine_question"].is_string())
            q.extras["machine_question"] = record["machine_question"].get<std::string>();
        out.push_back(std::move(q));
        ++index;
    }
    return out;
}

std::vector<QuestionInstance> load_lcquad1(const std::string& path) {
    auto root = parse_json_file(path, "lcquad1");
    if (!root.is_array()) throw DataError("lcquad1: expected a top-level JSON array");

    std::vector<QuestionInstance> out;
    std::size_t index = 0;
    for (const auto& record : root) {
        QuestionInstance q;
        q.dataset = "lcquad1";
        if (!record.contains("_id")) missing_field("lcquad1", index, "_id");
        q.id = id_to_string(record["_id"]);
        q.question = require_string(record, "lcquad1", index, "corrected_question");
        q.gold_sparql = require_string(record, "lcquad1", index, "sparql_query");
        if (record.contains("intermediary_question") &&
            record["intermediary_question"].is_string())
            q.extras["intermediary_question"] =
                record["intermediary_question"].get<std::string>();
        out.push_back(std::move(q));
        ++index;
    }
    return out;
}

std::vector<QuestionInstance> load_lcquad2(const std::string& path) {
    auto root = parse_json_file(path, "lcquad2");
    if (!root.is_array()) throw DataError("lcquad2: expected a top-level JSON array");

    std::vector<QuestionInstance> out;
    std::size_t index = 0;
    for (const auto& record : root) {
        QuestionInstance q;
        q.dataset = "lcquad2";
        if (!record.contains("uid")) missing_field("lcquad2", index, "uid");
        q.id = id_to_string(record["uid"]);
        // pipelines consume only the "question" key, never the annotated variants
        q.question = require_string(record, "lcquad2", index, "question");
        if (record.contains("NNQT_question") && record["NNQT_question"].is_string())
            q.extras["NNQT_question"] = record["NNQT_question"].get<std::string>();
        if (record.contains("paraphrased_question") && record["paraphrased_question"].is_string())
            q.extras["paraphrased_question"] = record["paraphrased_question"].get<std::string>();
        if (record.contains("sparql_wikidata") && record["sparql_wikidata"].is_string())
            q.gold_sparql = record["sparql_wikidata"].get<std::string>();
        else if (record.contains("sparql_dbpedia18") && record["sparql_dbpedia18"].is_string())
            q.gold_sparql = record["sparql_dbpedia18"].get<std::string>();
        out.push_back(std::move(q));
        ++index;
    }
    return out;
}

std::vector<QuestionInstance> load_kqapro(const std::string& path) {
    auto root = parse_json_file(path, "kqapro");
    if (!root.is_array()) throw DataError("kqapro: expected a top-level JSON array");

    std::vector<QuestionInstance> out;
    std::size_t index = 0;
    for (const auto& record : root) {
        QuestionInstance q;
        q.dataset = "kqapro";
        q.id = "kqapro-" + std::to_string(index + 1);
        q.question = require_string(record, "kqapro", index, "question");
        if (record.contains("sparql") && record["sparql"].is_string())
            q.gold_sparql = record["sparql"].get<std::string>();
        if (record.contains("answer") && record["answer"].is_string())
            q.gold_answers.push_back(record["answer"].get<std::string>());
        if (record.contains("choices") && record["choices"].is_array()) {
            std::vector<std::string> choices;
            for (const auto& c : record["choices"])
                if (c.is_string()) choices.push_back(c.get<std::string>());
            q.extras["choices"] = join(choices, "|");
        }
        out.push_back(std::move(q));
        ++index;
    }
    return out;
}

}  // namespace

std::vector<QuestionInstance> load_dataset(Dataset dataset, const std::string& path) {
    switch (dataset) {
        case Dataset::webqsp: return load_webqsp(path);
        case Dataset::metaqa3: return load_metaqa3(path);
        case Dataset::cwq: return load_cwq(path);
        case Dataset::lcquad1: return load_lcquad1(path);
        case Dataset::lcquad2: return load_lcquad2(path);
        case Dataset::kqapro: return load_kqapro(path);
    }
    throw ConfigError("unknown dataset");
}

}  // namespace kgqa
