#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "kgqa/embedding_index.hpp"

using namespace kgqa;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const Embedder> hash_embedder(std::size_t dim = 32, std::uint64_t seed = 1) {
    return std::make_shared<HashEmbedder>(dim, seed);
}

std::string random_text(std::mt19937_64& rng, int max_words = 6) {
    static const char* words[] = {"movie", "director", "actor", "genre", "year",
                                  "language", "writer", "award", "country", "river"};
    std::uniform_int_distribution<int> n(1, max_words);
    std::uniform_int_distribution<std::size_t> pick(0, std::size(words) - 1);
    std::string out;
    int count = n(rng);
    for (int i = 0; i < count; ++i) {
        if (i) out += ' ';
        out += words[pick(rng)];
    }
    return out;
}

}  // namespace

TEST_CASE("hash embedder is deterministic and unit-norm") {
    auto e = hash_embedder();
    auto a = e->embed("movie director");
    auto b = e->embed("movie director");
    CHECK(a == b);
    CHECK(cosine_similarity(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    SUBCASE("empty text embeds to the zero vector") {
        auto z = e->embed("");
        for (float x : z) CHECK(x == 0.0f);
        CHECK(cosine_similarity(z, a) == 0.0);
    }
    SUBCASE("different seeds give different embeddings") {
        auto other = HashEmbedder(32, 2).embed("movie director");
        CHECK(a != other);
    }
}

TEST_CASE("short text becomes exactly one chunk") {
    EmbeddingIndex index(hash_embedder());
    auto ids = index.add("doc1", "a few words only");
    CHECK(ids.size() == 1);
    CHECK(index.chunk(ids[0]).text == "a few words only");
}

TEST_CASE("window arithmetic: 10 tokens, size 4, overlap 1") {
    EmbeddingIndex index(hash_embedder());
    auto ids = index.add("doc", "t1 t2 t3 t4 t5 t6 t7 t8 t9 t10", {.size = 4, .overlap = 1});
    REQUIRE(ids.size() == 3);
    CHECK(index.chunk(ids[0]).text == "t1 t2 t3 t4");
    CHECK(index.chunk(ids[1]).text == "t4 t5 t6 t7");
    CHECK(index.chunk(ids[2]).text == "t7 t8 t9 t10");
}

TEST_CASE("re-adding a source appends distinct chunk ids") {
    EmbeddingIndex index(hash_embedder());
    auto first = index.add("doc", "same text");
    auto second = index.add("doc", "same text");
    CHECK(first != second);
    CHECK(index.size() == 2);
}

TEST_CASE("chunking parameters are validated") {
    EmbeddingIndex index(hash_embedder());
    CHECK_THROWS_AS(index.add("doc", "x", {.size = 4, .overlap = 4}), ConfigError);
    CHECK_THROWS_AS(index.add("doc", "x", {.size = 0, .overlap = 0}), ConfigError);
}

TEST_CASE("top_k basics") {
    EmbeddingIndex index(hash_embedder());

    SUBCASE("empty index returns an empty, flagged result") {
        auto r = index.top_k("anything", 3);
        CHECK(r.items.empty());
        CHECK(r.empty_index);
    }

    index.add("a", "movie director");
    SUBCASE("single chunk always wins") {
        auto r = index.top_k("totally unrelated", 5);
        REQUIRE(r.items.size() == 1);
        CHECK(r.items[0].chunk_id == 0);
    }
    SUBCASE("self query scores 1") {
        auto r = index.top_k("movie director", 1);
        CHECK(r.items[0].score == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("k larger than index returns the full index sorted") {
        index.add("b", "river country");
        auto r = index.top_k("movie director", 10);
        CHECK(r.items.size() == 2);
        CHECK(r.items[0].score >= r.items[1].score);
    }
    SUBCASE("degenerate query scores zero everywhere") {
        auto r = index.top_k("", 1);
        CHECK(r.degenerate_query);
        CHECK(r.items[0].score == 0.0);
    }
}

TEST_CASE("ties break by ascending chunk id") {
    EmbeddingIndex index(hash_embedder());
    index.add("a", "movie");
    index.add("b", "movie");
    index.add("c", "movie");
    auto r = index.top_k("movie", 3);
    REQUIRE(r.items.size() == 3);
    CHECK(r.items[0].chunk_id == 0);
    CHECK(r.items[1].chunk_id == 1);
    CHECK(r.items[2].chunk_id == 2);
}

TEST_CASE("top_k equals the exhaustive-scan oracle on random indexes") {
    std::mt19937_64 rng(555);
    for (int trial = 0; trial < 10; ++trial) {
        EmbeddingIndex index(hash_embedder());
        std::uniform_int_distribution<int> size_pick(1, 400);
        int n = size_pick(rng);
        for (int i = 0; i < n; ++i) index.add("s" + std::to_string(i), random_text(rng));

        for (int q = 0; q < 5; ++q) {
            std::string query = random_text(rng);
            auto qvec = index.embedder().embed(query);

            // oracle: brute-force cosine over all stored chunks
            std::vector<ScoredChunk> expected;
            for (std::uint32_t id = 0; id < index.size(); ++id) {
                const auto& c = index.chunk(id);
                double score = 0;
                if (!c.degenerate) score = cosine_similarity(qvec, c.vector);
                expected.push_back({id, score});
            }
            std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.chunk_id < b.chunk_id;
            });
            std::size_t k = 7;
            if (expected.size() > k) expected.resize(k);

            auto got = index.top_k(query, k);
            REQUIRE(got.items.size() == expected.size());
            for (std::size_t i = 0; i < expected.size(); ++i) {
                CHECK(got.items[i].chunk_id == expected[i].chunk_id);
                CHECK(got.items[i].score == doctest::Approx(expected[i].score).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("cosine is symmetric and 1 on self") {
    std::mt19937_64 rng(3);
    auto e = hash_embedder();
    for (int i = 0; i < 50; ++i) {
        auto a = e->embed(random_text(rng));
        auto b = e->embed(random_text(rng));
        CHECK(cosine_similarity(a, b) == doctest::Approx(cosine_similarity(b, a)).epsilon(1e-12));
        double na = cosine_similarity(a, a);
        if (na != 0.0) CHECK(na == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("index persists to binary plus sidecar and loads back") {
    EmbeddingIndex index(hash_embedder());
    index.add("src one", "movie director year");
    index.add("src\ttwo", "river\tcountry");  // tabs must survive the sidecar
    index.add("empty", "");

    auto bin = fs::temp_directory_path() / "kgqa_index.bin";
    auto tsv = fs::temp_directory_path() / "kgqa_index.tsv";
    index.save(bin.string(), tsv.string());

    auto loaded = EmbeddingIndex::load(bin.string(), tsv.string(), hash_embedder());
    REQUIRE(loaded.size() == index.size());
    for (std::uint32_t id = 0; id < index.size(); ++id) {
        CHECK(loaded.chunk(id).text == index.chunk(id).text);
        CHECK(loaded.chunk(id).source_id == index.chunk(id).source_id);
        CHECK(loaded.chunk(id).vector == index.chunk(id).vector);
        CHECK(loaded.chunk(id).degenerate == index.chunk(id).degenerate);
    }
    auto q = index.top_k("movie director year", 2);
    auto lq = loaded.top_k("movie director year", 2);
    REQUIRE(q.items.size() == lq.items.size());
    CHECK(q.items[0].chunk_id == lq.items[0].chunk_id);

    SUBCASE("dimension mismatch on load is an error") {
        CHECK_THROWS_AS(EmbeddingIndex::load(bin.string(), tsv.string(), hash_embedder(16)),
                        DataError);
    }
}

TEST_CASE("composite query concatenates question and topic labels") {
    CHECK(composite_query("who directed it", {"Kismet"}) == "who directed it || Kismet");
    CHECK(composite_query("who directed it", {}) == "who directed it");
}
