#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kgqa/embedding_index.hpp"
#include "kgqa/llm_gateway.hpp"

namespace kgqa {

// Training examples retrievable by question similarity. One chunk per
// example question; whole questions are short enough to never split.
class FewShotStore {
public:
    explicit FewShotStore(std::shared_ptr<const Embedder> embedder)
        : index_(std::move(embedder)) {}

    void add(FewShotExample example) {
        index_.add(example.source_id, example.question,
                   {.size = 4096, .overlap = 0});
        examples_.push_back(std::move(example));
    }

    std::size_t size() const { return examples_.size(); }

    // descending similarity; at most n
    std::vector<std::pair<FewShotExample, double>> top_n(const std::string& query,
                                                         std::size_t n) const {
        std::vector<std::pair<FewShotExample, double>> out;
        if (examples_.empty() || n == 0) return out;
        auto result = index_.top_k(query, n);
        out.reserve(result.items.size());
        for (const auto& item : result.items)
            out.emplace_back(examples_[item.chunk_id], item.score);
        return out;
    }

    std::vector<FewShotExample> examples_for(const std::string& query, std::size_t n) const {
        std::vector<FewShotExample> out;
        for (auto& [ex, score] : top_n(query, n)) out.push_back(ex);
        return out;
    }

private:
    EmbeddingIndex index_;
    std::vector<FewShotExample> examples_;
};

// Corpus file: TSV question<TAB>solution<TAB>source-id (source-id optional).
std::shared_ptr<FewShotStore> load_few_shot_corpus(const std::string& path,
                                                   std::shared_ptr<const Embedder> embedder);

}  // namespace kgqa
