#pragma once

#include <string>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

// One audited pipeline event. attempt 0 is the first try of a skill; higher
// attempts are feedback rounds.
struct TraceRecord {
    int step = 0;
    std::string skill;
    std::string inputs_digest;
    std::vector<std::string> outputs;
    int attempt = 0;
    std::string note;
};

inline std::string json_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    static const char* hex = "0123456789abcdef";
                    out += "\\u00";
                    out += hex[(c >> 4) & 0xf];
                    out += hex[c & 0xf];
                } else {
                    out += c;
                }
        }
    }
    return out;
}

inline std::string to_json_line(const TraceRecord& r) {
    std::string out = "{\"step\":" + std::to_string(r.step);
    out += ",\"skill\":\"" + json_escape(r.skill) + "\"";
    out += ",\"inputs_digest\":\"" + json_escape(r.inputs_digest) + "\"";
    out += ",\"outputs\":[";
    for (std::size_t i = 0; i < r.outputs.size(); ++i) {
        if (i) out += ",";
        out += "\"" + json_escape(r.outputs[i]) + "\"";
    }
    out += "],\"attempt\":" + std::to_string(r.attempt);
    out += ",\"note\":\"" + json_escape(r.note) + "\"}";
    return out;
}

inline std::string to_jsonl(const std::vector<TraceRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json_line(r);
        out += '\n';
    }
    return out;
}

}  // namespace kgqa
