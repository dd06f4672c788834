#include "kgqa/embedding_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace kgqa {

namespace {

bool is_word_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

struct WordSpan {
    std::size_t begin;
    std::size_t end;
};

// whitespace-delimited words with byte offsets, for chunk windowing
std::vector<WordSpan> word_spans(std::string_view text) {
    std::vector<WordSpan> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size()) break;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        out.push_back({start, i});
    }
    return out;
}

double l2_norm(std::span<const float> v) {
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

}  // namespace

std::vector<float> HashEmbedder::embed(std::string_view text) const {
    std::vector<float> vec(dimension_, 0.0f);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        std::uint64_t h = fnv1a64(token) ^ (seed_ * 0x9e3779b97f4a7c15ull);
        h ^= h >> 33;
        h *= 0xff51afd7ed558ccdull;
        h ^= h >> 33;
        std::size_t bucket = h % dimension_;
        float sign = ((h >> 32) & 1) ? 1.0f : -1.0f;
        vec[bucket] += sign;
        token.clear();
    };
    for (char c : text) {
        if (is_word_char(c)) {
            token += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
        } else {
            flush();
        }
    }
    flush();
    double norm = l2_norm(vec);
    if (norm > 0)
        for (float& x : vec) x = static_cast<float>(x / norm);
    return vec;
}

std::vector<float> HttpEmbedder::embed(std::string_view text) const {
    httplib::Client client(base_url_);
    client.set_read_timeout(30, 0);
    nlohmann::json body{{"text", std::string(text)}};
    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res)
        throw BackendError("embedding endpoint unreachable: " + base_url_, /*retryable=*/true);
    if (res->status != 200)
        throw BackendError("embedding endpoint returned " + std::to_string(res->status),
                           /*retryable=*/res->status >= 500);
    auto json = nlohmann::json::parse(res->body, nullptr, false);
    if (json.is_discarded() || !json.contains("embedding") || !json["embedding"].is_array())
        throw BackendError("embedding endpoint returned malformed body", /*retryable=*/false);
    std::vector<float> vec = json["embedding"].get<std::vector<float>>();
    if (vec.size() != dimension_)
        throw BackendError("embedding dimension mismatch: expected " + std::to_string(dimension_) +
                               ", got " + std::to_string(vec.size()),
                           /*retryable=*/false);
    return vec;
}

EmbeddingIndex::EmbeddingIndex(std::shared_ptr<const Embedder> embedder)
    : embedder_(std::move(embedder)) {
    if (!embedder_) throw ConfigError("embedding index requires an embedder");
}

std::vector<std::uint32_t> EmbeddingIndex::add(std::string source_id, std::string_view text,
                                               ChunkingConfig chunking) {
    if (chunking.size == 0 || chunking.overlap >= chunking.size)
        throw ConfigError("chunking requires size > overlap >= 0");

    std::vector<std::pair<std::size_t, std::size_t>> windows;  // byte ranges
    auto words = word_spans(text);
    if (words.size() <= chunking.size) {
        windows.emplace_back(0, text.size());
    } else {
        std::size_t stride = chunking.size - chunking.overlap;
        for (std::size_t start = 0; start < words.size(); start += stride) {
            std::size_t end = std::min(start + chunking.size, words.size());
            windows.emplace_back(words[start].begin, words[end - 1].end);
            if (end == words.size()) break;
        }
    }

    std::vector<std::uint32_t> ids;
    ids.reserve(windows.size());
    for (auto [b, e] : windows) {
        std::string chunk_text = trim(text.substr(b, e - b));
        auto vec = embedder_->embed(chunk_text);
        if (vec.size() != dimension()) throw DataError("embedder produced wrong dimension");
        double norm = l2_norm(vec);
        auto id = static_cast<std::uint32_t>(chunks_.size());
        chunks_.push_back({id, source_id, std::move(chunk_text), std::move(vec), norm == 0});
        norms_.push_back(norm);
        ids.push_back(id);
    }
    return ids;
}

TopKResult EmbeddingIndex::top_k(std::string_view query, std::size_t k) const {
    return top_k_vector(embedder_->embed(query), k);
}

TopKResult EmbeddingIndex::top_k_vector(std::span<const float> query, std::size_t k) const {
    TopKResult result;
    if (chunks_.empty()) {
        result.empty_index = true;
        return result;
    }
    double qnorm = l2_norm(query);
    result.degenerate_query = qnorm == 0;

    result.items.reserve(chunks_.size());
    for (const Chunk& c : chunks_) {
        double score = 0;
        if (qnorm > 0 && norms_[c.id] > 0) {
            double dot = 0;
            for (std::size_t i = 0; i < query.size(); ++i)
                dot += static_cast<double>(query[i]) * c.vector[i];
            score = dot / (qnorm * norms_[c.id]);
        }
        result.items.push_back({c.id, score});
    }
    std::sort(result.items.begin(), result.items.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.chunk_id < b.chunk_id;
    });
    if (result.items.size() > k) result.items.resize(k);
    return result;
}

namespace {

constexpr char kVecMagic[] = "KGQAVEC1";

}  // namespace

void EmbeddingIndex::save(const std::string& vectors_path, const std::string& sidecar_path) const {
    std::ofstream bin(vectors_path, std::ios::binary);
    if (!bin) throw DataError("cannot write index: " + vectors_path);
    bin.write(kVecMagic, sizeof(kVecMagic) - 1);
    auto dim = static_cast<std::uint32_t>(dimension());
    auto count = static_cast<std::uint32_t>(chunks_.size());
    bin.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    bin.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (const Chunk& c : chunks_) {
        bin.write(reinterpret_cast<const char*>(&c.id), sizeof c.id);
        char deg = c.degenerate ? 1 : 0;
        bin.write(&deg, 1);
        bin.write(reinterpret_cast<const char*>(c.vector.data()),
                  static_cast<std::streamsize>(c.vector.size() * sizeof(float)));
    }
    if (!bin) throw DataError("index write failed: " + vectors_path);

    std::ofstream tsv(sidecar_path);
    if (!tsv) throw DataError("cannot write sidecar: " + sidecar_path);
    for (const Chunk& c : chunks_)
        tsv << c.id << '\t' << tsv_escape(c.source_id) << '\t' << tsv_escape(c.text) << '\n';
}

EmbeddingIndex EmbeddingIndex::load(const std::string& vectors_path, const std::string& sidecar_path,
                                    std::shared_ptr<const Embedder> embedder) {
    EmbeddingIndex index(std::move(embedder));

    std::ifstream bin(vectors_path, std::ios::binary);
    if (!bin) throw DataError("cannot read index: " + vectors_path);
    char magic[sizeof(kVecMagic)] = {};
    bin.read(magic, sizeof(kVecMagic) - 1);
    if (std::string_view(magic, sizeof(kVecMagic) - 1) != kVecMagic)
        throw DataError("not an embedding index: " + vectors_path);
    std::uint32_t dim = 0, count = 0;
    bin.read(reinterpret_cast<char*>(&dim), sizeof dim);
    bin.read(reinterpret_cast<char*>(&count), sizeof count);
    if (dim != index.dimension())
        throw DataError("index dimension " + std::to_string(dim) + " does not match embedder " +
                        std::to_string(index.dimension()));

    std::ifstream tsv(sidecar_path);
    if (!tsv) throw DataError("cannot read sidecar: " + sidecar_path);

    for (std::uint32_t i = 0; i < count; ++i) {
        Chunk c;
        bin.read(reinterpret_cast<char*>(&c.id), sizeof c.id);
        char deg = 0;
        bin.read(&deg, 1);
        c.degenerate = deg != 0;
        c.vector.resize(dim);
        bin.read(reinterpret_cast<char*>(c.vector.data()),
                 static_cast<std::streamsize>(dim * sizeof(float)));
        if (!bin) throw DataError("index truncated: " + vectors_path);

        std::string line;
        if (!std::getline(tsv, line)) throw DataError("sidecar truncated: " + sidecar_path);
        auto cols = split(line, '\t');
        if (cols.size() != 3 || std::stoul(cols[0]) != c.id)
            throw DataError("sidecar out of sync at chunk " + std::to_string(c.id));
        c.source_id = tsv_unescape(cols[1]);
        c.text = tsv_unescape(cols[2]);

        index.norms_.push_back(l2_norm(c.vector));
        index.chunks_.push_back(std::move(c));
    }
    return index;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DataError("cosine over mismatched dimensions");
    double dot = 0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
    double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0 || nb == 0) return 0;
    return dot / (na * nb);
}

std::string composite_query(std::string_view question, const std::vector<std::string>& topic_labels) {
    std::string out(question);
    if (!topic_labels.empty()) {
        out += " || ";
        out += join(topic_labels, " ");
    }
    return out;
}

}  // namespace kgqa
