#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgqa/common.hpp"

namespace kgqa {

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    // deterministic per embedder; text with no tokens yields the zero vector
    virtual std::vector<float> embed(std::string_view text) const = 0;
};

// Seeded feature-hash projection onto a fixed dimension; the test embedder.
// Tokens are lowercased alphanumeric runs; each token adds +-1 to one bucket;
// the result is L2-normalized.
class HashEmbedder : public Embedder {
public:
    explicit HashEmbedder(std::size_t dimension = 64, std::uint64_t seed = 1)
        : dimension_(dimension), seed_(seed) {}

    std::size_t dimension() const override { return dimension_; }
    std::vector<float> embed(std::string_view text) const override;

private:
    std::size_t dimension_;
    std::uint64_t seed_;
};

// Remote embedder: POST {"text": ...} to the endpoint, expects
// {"embedding": [...]} back.
class HttpEmbedder : public Embedder {
public:
    HttpEmbedder(std::string base_url, std::string path, std::size_t dimension)
        : base_url_(std::move(base_url)), path_(std::move(path)), dimension_(dimension) {}

    std::size_t dimension() const override { return dimension_; }
    std::vector<float> embed(std::string_view text) const override;

private:
    std::string base_url_;
    std::string path_;
    std::size_t dimension_;
};

// Window sizes are in estimated tokens (whitespace-delimited words).
struct ChunkingConfig {
    std::size_t size = 256;
    std::size_t overlap = 32;
};

struct Chunk {
    std::uint32_t id;
    std::string source_id;
    std::string text;
    std::vector<float> vector;
    bool degenerate;  // zero vector
};

struct ScoredChunk {
    std::uint32_t chunk_id;
    double score;
};

struct TopKResult {
    std::vector<ScoredChunk> items;  // score descending, ties by ascending chunk id
    bool degenerate_query = false;
    bool empty_index = false;
};

// Exact (exhaustive) cosine retrieval over an in-memory chunk store.
// Build phase is single-writer; queries are safe concurrently afterwards.
class EmbeddingIndex {
public:
    explicit EmbeddingIndex(std::shared_ptr<const Embedder> embedder);

    // Splits text into word windows of `size` with `overlap`, embeds and
    // stores each. Re-adding the same source appends fresh chunk ids.
    std::vector<std::uint32_t> add(std::string source_id, std::string_view text,
                                   ChunkingConfig chunking = {});

    TopKResult top_k(std::string_view query, std::size_t k) const;
    TopKResult top_k_vector(std::span<const float> query, std::size_t k) const;

    std::size_t size() const { return chunks_.size(); }
    std::size_t dimension() const { return embedder_->dimension(); }
    const Chunk& chunk(std::uint32_t id) const { return chunks_.at(id); }
    const Embedder& embedder() const { return *embedder_; }

    // binary vector file plus TSV sidecar chunk-id -> source-id -> text
    void save(const std::string& vectors_path, const std::string& sidecar_path) const;
    static EmbeddingIndex load(const std::string& vectors_path, const std::string& sidecar_path,
                               std::shared_ptr<const Embedder> embedder);

private:
    std::shared_ptr<const Embedder> embedder_;
    std::vector<Chunk> chunks_;
    std::vector<double> norms_;
};

// 0 when either vector has zero norm; dimensions must match.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Query text for RAG retrieval: question plus topic-entity labels.
std::string composite_query(std::string_view question, const std::vector<std::string>& topic_labels);

}  // namespace kgqa
