#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmae/errors.hpp"
#include "cmae/tokenize.hpp"

namespace cmae::embed {

enum class Provenance { Xavier, Word2Vec, External };

struct EmbeddingMatrix {
    std::int64_t vocab_size = 0;
    std::int64_t dim = 0;
    std::vector<float> weights; // row-major vocab_size x dim
    bool frozen = false;
    Provenance provenance = Provenance::Xavier;

    float at(std::int64_t row, std::int64_t col) const { return weights[row * dim + col]; }
};

// uniform on [-b, b] with b = sqrt(6 / (vocab_size + dim)); deterministic per
// seed independent of the standard library's distribution internals.
EmbeddingMatrix xavier_init(std::int64_t vocab_size, std::int64_t dim, std::uint64_t seed);

struct Word2VecParams {
    std::int64_t dim = 64;
    std::int64_t window = 5;
    std::int64_t min_count = 5;
    std::int64_t negative_samples = 5;
    std::int64_t epochs = 5;
    double learning_rate = 0.025; // linear decay to lr * 1e-4
};

struct Word2VecResult {
    // byte tokens ordered by descending corpus frequency; position i holds
    // the token with id i + 1 (id 0 is the pad row, kept exactly zero).
    std::vector<std::uint8_t> vocabulary;
    EmbeddingMatrix matrix;
    tokenize::TokenMap map; // bytes below min_count encode to pad
};

// skip-gram with negative sampling over byte streams; single-threaded and
// deterministic for a fixed seed.
Word2VecResult train_word2vec(const std::vector<std::vector<std::uint8_t>>& corpus,
                              const Word2VecParams& params,
                              std::uint64_t seed);

// interchange format: magic "EMB1", u32 rows, u32 dim, u8 frozen flag, then
// rows x dim little-endian f32 row-major.
void save_embeddings(const std::string& path, const EmbeddingMatrix& matrix);

// selected_rows, when given, lists the source row for every output row (the
// CMAE byte compaction passes 257 entries: pad source then bytes 0x00..0xff).
EmbeddingMatrix load_external_embeddings(const std::string& path,
                                         const std::optional<std::vector<std::uint32_t>>& selected_rows);

// pad row followed by the 256 byte rows in byte order, taken from a strict
// byte->LLM-id token map.
std::vector<std::uint32_t> selection_from_map(const tokenize::TokenMap& map);

} // namespace cmae::embed
