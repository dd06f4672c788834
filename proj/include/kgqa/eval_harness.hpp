#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

struct QuestionInstance {
    std::string id;
    std::string question;
    std::vector<std::string> topic_entities;
    std::vector<std::string> gold_answers;
    std::string gold_sparql;  // empty when the dataset has none
    std::string dataset;
    std::map<std::string, std::string> extras;
};

// "1999.0" and "1999.000" compare equal to "1999"
std::string canonicalize_numeric(const std::string& s);

// normalize: lowercase + trim both sides before comparing
bool hits_at_1(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
               bool normalize);
bool exact_match(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                 bool normalize);
// precision |P∩G|/|P| (0 if P empty), recall |P∩G|/|G|, harmonic mean
double instance_f1(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                   bool normalize);
double macro_f1(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs,
    bool normalize);

struct InstanceRecord {
    std::string id;
    std::vector<std::string> predicted;
    bool accepted = false;
    bool hit = false;
    bool em = false;
    double f1 = 0.0;
    int llm_calls = 0;
    long long latency_ms = 0;
    std::string error;  // empty when the instance ran cleanly
};

std::string record_to_json(const InstanceRecord& record);
InstanceRecord record_from_json(const std::string& line);

struct EvalAggregates {
    double hits_at_1 = 0.0;
    double em_accuracy = 0.0;
    double macro_f1 = 0.0;
    std::size_t total = 0;
    std::size_t failures = 0;

    friend bool operator==(const EvalAggregates&, const EvalAggregates&) = default;
};

EvalAggregates aggregate_records(const std::vector<InstanceRecord>& records);

struct EvalReport {
    std::vector<InstanceRecord> records;  // in instance order
    EvalAggregates aggregates;
};

enum class SampleMode { first_n, random };

struct EvalConfig {
    std::size_t sample_n = 0;  // 0 = every instance
    SampleMode sample_mode = SampleMode::first_n;
    std::uint64_t seed = 0;
    int workers = 1;
    bool normalize = true;
    std::string checkpoint_path;  // empty = no checkpointing
    bool resume = false;
    bool record_latency = true;  // false pins latency_ms to 0 for determinism
};

struct PipelineOutcome {
    std::vector<std::string> answers;
    bool accepted = false;
    int llm_calls = 0;
};

using PipelineFn = std::function<PipelineOutcome(const QuestionInstance&)>;

// Runs every (sampled) instance through the pipeline, records metrics,
// checkpoints each finished record, and never lets one failure abort the run.
EvalReport evaluate(const PipelineFn& pipeline, const std::vector<QuestionInstance>& instances,
                    const EvalConfig& config);

// seeded sampling used by evaluate(); exposed for determinism tests
std::vector<QuestionInstance> sample_instances(const std::vector<QuestionInstance>& instances,
                                               const EvalConfig& config);

std::string summary_table(const EvalReport& report);

// writes <basename>.records.jsonl, <basename>.summary.txt, <basename>.metrics.tsv;
// re-derives the aggregates from the records and refuses to emit on mismatch
void write_report(const EvalReport& report, const std::string& basename);

}  // namespace kgqa
