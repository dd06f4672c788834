#include "kgqa/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "kgqa/trace.hpp"

namespace kgqa {

std::string canonicalize_numeric(const std::string& s) {
    auto v = trim_view(s);
    if (v.empty()) return std::string(s);
    std::size_t i = 0;
    if (v[i] == '-' || v[i] == '+') ++i;
    std::size_t digits_start = i;
    while (i < v.size() && v[i] >= '0' && v[i] <= '9') ++i;
    if (i == digits_start) return std::string(s);  // no integer part
    if (i == v.size()) return std::string(v);      // plain integer
    if (v[i] != '.') return std::string(s);
    std::size_t frac_start = ++i;
    while (i < v.size() && v[i] >= '0' && v[i] <= '9') ++i;
    if (i != v.size()) return std::string(s);  // trailing junk: not numeric
    for (std::size_t j = frac_start; j < i; ++j)
        if (v[j] != '0') return std::string(v);  // non-integer value, keep as is
    std::string out(v.substr(0, frac_start - 1));
    return out.empty() || out == "-" || out == "+" ? std::string(v) : out;
}

namespace {

std::set<std::string> answer_set(const std::vector<std::string>& answers, bool normalize) {
    std::set<std::string> out;
    for (const auto& a : answers) {
        std::string v = canonicalize_numeric(a);
        if (normalize) v = normalize_label(v);
        out.insert(std::move(v));
    }
    return out;
}

std::size_t intersection_size(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::size_t n = 0;
    const auto& small = a.size() <= b.size() ? a : b;
    const auto& large = a.size() <= b.size() ? b : a;
    for (const auto& v : small)
        if (large.count(v)) ++n;
    return n;
}

}  // namespace

bool hits_at_1(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
               bool normalize) {
    auto p = answer_set(predicted, normalize);
    auto g = answer_set(gold, normalize);
    return intersection_size(p, g) > 0;
}

bool exact_match(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                 bool normalize) {
    return answer_set(predicted, normalize) == answer_set(gold, normalize);
}

double instance_f1(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                   bool normalize) {
    auto p = answer_set(predicted, normalize);
    auto g = answer_set(gold, normalize);
    if (p.empty() || g.empty()) return 0.0;
    double overlap = static_cast<double>(intersection_size(p, g));
    double precision = overlap / static_cast<double>(p.size());
    double recall = overlap / static_cast<double>(g.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double macro_f1(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs,
    bool normalize) {
    if (pairs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [p, g] : pairs) sum += instance_f1(p, g, normalize);
    return sum / static_cast<double>(pairs.size());
}

namespace {

std::string format_f1(double f1) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", f1);
    return buf;
}

}  // namespace

std::string record_to_json(const InstanceRecord& r) {
    std::string out = "{\"id\":\"" + json_escape(r.id) + "\",\"predicted\":[";
    for (std::size_t i = 0; i < r.predicted.size(); ++i) {
        if (i) out += ",";
        out += "\"" + json_escape(r.predicted[i]) + "\"";
    }
    out += "],\"accepted\":";
    out += r.accepted ? "true" : "false";
    out += ",\"hit\":";
    out += r.hit ? "true" : "false";
    out += ",\"em\":";
    out += r.em ? "true" : "false";
    out += ",\"f1\":" + format_f1(r.f1);
    out += ",\"llm_calls\":" + std::to_string(r.llm_calls);
    out += ",\"latency_ms\":" + std::to_string(r.latency_ms);
    out += ",\"error\":\"" + json_escape(r.error) + "\"}";
    return out;
}

InstanceRecord record_from_json(const std::string& line) {
    auto json = nlohmann::json::parse(line, nullptr, false);
    if (json.is_discarded()) throw DataError("malformed checkpoint record: " + line);
    InstanceRecord r;
    r.id = json.value("id", "");
    if (json.contains("predicted"))
        for (const auto& p : json["predicted"]) r.predicted.push_back(p.get<std::string>());
    r.accepted = json.value("accepted", false);
    r.hit = json.value("hit", false);
    r.em = json.value("em", false);
    r.f1 = json.value("f1", 0.0);
    r.llm_calls = json.value("llm_calls", 0);
    r.latency_ms = json.value("latency_ms", 0ll);
    r.error = json.value("error", "");
    return r;
}

EvalAggregates aggregate_records(const std::vector<InstanceRecord>& records) {
    EvalAggregates agg;
    agg.total = records.size();
    if (records.empty()) return agg;
    double hits = 0, ems = 0, f1_sum = 0;
    for (const auto& r : records) {
        if (r.hit) hits += 1;
        if (r.em) ems += 1;
        f1_sum += r.f1;
        if (!r.error.empty()) ++agg.failures;
    }
    auto n = static_cast<double>(records.size());
    agg.hits_at_1 = hits / n;
    agg.em_accuracy = ems / n;
    agg.macro_f1 = f1_sum / n;
    return agg;
}

std::vector<QuestionInstance> sample_instances(const std::vector<QuestionInstance>& instances,
                                               const EvalConfig& config) {
    if (config.sample_n == 0 || config.sample_n >= instances.size()) return instances;
    if (config.sample_mode == SampleMode::first_n)
        return {instances.begin(), instances.begin() + static_cast<long>(config.sample_n)};

    // seeded subset, original order preserved
    std::vector<std::size_t> indices(instances.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    std::mt19937_64 rng(config.seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(config.sample_n);
    std::sort(indices.begin(), indices.end());
    std::vector<QuestionInstance> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(instances[i]);
    return out;
}

EvalReport evaluate(const PipelineFn& pipeline, const std::vector<QuestionInstance>& instances,
                    const EvalConfig& config) {
    auto selected = sample_instances(instances, config);

    std::unordered_map<std::string, InstanceRecord> done;
    if (config.resume && !config.checkpoint_path.empty()) {
        std::ifstream in(config.checkpoint_path);
        std::string line;
        while (in && std::getline(in, line)) {
            if (trim_view(line).empty()) continue;
            auto record = record_from_json(line);
            done.emplace(record.id, std::move(record));
        }
    }

    std::ofstream checkpoint;
    std::mutex checkpoint_mutex;
    if (!config.checkpoint_path.empty())
        checkpoint.open(config.checkpoint_path, config.resume ? std::ios::app : std::ios::trunc);

    std::vector<InstanceRecord> records(selected.size());
    std::atomic<std::size_t> cursor{0};

    auto run_one = [&](const QuestionInstance& instance) {
        InstanceRecord record;
        record.id = instance.id;
        auto started = std::chrono::steady_clock::now();
        try {
            auto outcome = pipeline(instance);
            record.predicted = outcome.answers;
            record.accepted = outcome.accepted;
            record.llm_calls = outcome.llm_calls;
        } catch (const std::exception& e) {
            record.error = e.what();
        }
        if (config.record_latency) {
            auto elapsed = std::chrono::steady_clock::now() - started;
            record.latency_ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
        }
        record.hit = hits_at_1(record.predicted, instance.gold_answers, config.normalize);
        record.em = exact_match(record.predicted, instance.gold_answers, config.normalize);
        record.f1 = instance_f1(record.predicted, instance.gold_answers, config.normalize);
        return record;
    };

    auto worker = [&] {
        while (true) {
            std::size_t i = cursor.fetch_add(1);
            if (i >= selected.size()) break;
            auto it = done.find(selected[i].id);
            if (it != done.end()) {
                records[i] = it->second;
                continue;
            }
            records[i] = run_one(selected[i]);
            if (checkpoint.is_open()) {
                std::lock_guard lock(checkpoint_mutex);
                checkpoint << record_to_json(records[i]) << '\n';
                checkpoint.flush();
            }
        }
    };

    int workers = std::max(1, config.workers);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    EvalReport report;
    report.records = std::move(records);
    report.aggregates = aggregate_records(report.records);
    return report;
}

std::string summary_table(const EvalReport& report) {
    std::ostringstream out;
    out << "instances   " << report.aggregates.total << "\n"
        << "failures    " << report.aggregates.failures << "\n"
        << "hits@1      " << format_f1(report.aggregates.hits_at_1) << "\n"
        << "em-accuracy " << format_f1(report.aggregates.em_accuracy) << "\n"
        << "macro-f1    " << format_f1(report.aggregates.macro_f1) << "\n";
    return out.str();
}

void write_report(const EvalReport& report, const std::string& basename) {
    if (!(aggregate_records(report.records) == report.aggregates))
        throw DataError("report aggregates do not match their records");

    std::ofstream records(basename + ".records.jsonl");
    if (!records) throw DataError("cannot write report records: " + basename);
    for (const auto& r : report.records) records << record_to_json(r) << '\n';

    std::ofstream summary(basename + ".summary.txt");
    summary << summary_table(report);

    std::ofstream tsv(basename + ".metrics.tsv");
    tsv << "metric\tvalue\n"
        << "instances\t" << report.aggregates.total << "\n"
        << "failures\t" << report.aggregates.failures << "\n"
        << "hits_at_1\t" << format_f1(report.aggregates.hits_at_1) << "\n"
        << "em_accuracy\t" << format_f1(report.aggregates.em_accuracy) << "\n"
        << "macro_f1\t" << format_f1(report.aggregates.macro_f1) << "\n";
}

}  // namespace kgqa
