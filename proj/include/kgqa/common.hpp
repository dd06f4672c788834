#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kgqa {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

// Data/file problems: unreadable sources, schema mismatches, unknown ids.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing templates, bad option combinations, malformed config files.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Transport-level failure talking to an LLM/embedding/SPARQL endpoint.
class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& msg, bool retryable)
        : std::runtime_error(msg), retryable(retryable) {}
    bool retryable;
};

// Rendered prompt does not fit the context window. Carries the overflow so
// callers can decide to switch to RAG.
class BudgetError : public std::runtime_error {
public:
    BudgetError(const std::string& msg, std::size_t overflow_tokens)
        : std::runtime_error(msg), overflow_tokens(overflow_tokens) {}
    std::size_t overflow_tokens;
};

inline std::string_view trim_view(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

// Lowercase + trim; the fallback match space for labels and answers.
inline std::string normalize_label(std::string_view s) { return to_lower(trim_view(s)); }

inline std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(delim, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline bool starts_with_icase(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        char a = s[i], b = prefix[i];
        if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
        if (b >= 'A' && b <= 'Z') b = static_cast<char>(b - 'A' + 'a');
        if (a != b) return false;
    }
    return true;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string digest_of(std::string_view s) { return hex64(fnv1a64(s)); }

// TSV field escaping: tabs/newlines/backslashes must survive a round trip.
inline std::string tsv_escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\\': out += "\\\\"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string tsv_unescape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            switch (s[i + 1]) {
                case 't': out += '\t'; ++i; continue;
                case 'n': out += '\n'; ++i; continue;
                case 'r': out += '\r'; ++i; continue;
                case '\\': out += '\\'; ++i; continue;
                default: break;
            }
        }
        out += s[i];
    }
    return out;
}

}  // namespace kgqa
