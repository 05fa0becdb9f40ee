#include "cmae/pipeline.hpp"

#include <chrono>
#include <cstring>
#include <fstream>
#include <random>

#include "cmae/data.hpp"
#include "cmae/nn/autodiff.hpp"

namespace cmae::pipeline {

namespace {

std::vector<std::uint8_t> hex_text_bytes(const std::vector<std::uint8_t>& payload) {
    const std::string hex = data::bytes_to_hex(payload);
    return std::vector<std::uint8_t>(hex.begin(), hex.end());
}

const tokenize::TokenMap& compact_byte_map() {
    static const tokenize::TokenMap map = tokenize::hex2int_map();
    return map;
}

} // namespace

tokenize::TokenSequence Tokenizer::encode(const std::vector<std::uint8_t>& payload,
                                          std::int64_t max_len) const {
    if (subword) return tokenize::encode_subword(hex_text_bytes(payload), *subword, max_len);
    if (compact_ids) return tokenize::encode_bytes(payload, compact_byte_map(), max_len);
    return tokenize::encode_bytes(payload, *map, max_len);
}

tokenize::TokenSequence Tokenizer::encode_display(const std::vector<std::uint8_t>& payload,
                                                  std::int64_t max_len) const {
    if (subword) return tokenize::encode_subword(hex_text_bytes(payload), *subword, max_len);
    return tokenize::encode_bytes(payload, *map, max_len);
}

std::optional<std::vector<std::uint32_t>> Tokenizer::embedding_selection() const {
    if (compact_ids && map) return embed::selection_from_map(*map);
    return std::nullopt;
}

Tokenizer make_tokenizer(const config::TokenizeConfig& cfg) {
    Tokenizer t;
    t.name = cfg.scheme;
    if (cfg.scheme == "hex2int") {
        t.map = tokenize::hex2int_map();
        t.pad_id = 0;
        t.vocab_size = 257;
        return t;
    }
    if (cfg.scheme == "word2vec") {
        if (cfg.map_file.empty())
            raise(ErrorCode::ConfigError, "tokenize.map_file is required for scheme word2vec");
        t.map = tokenize::load_word2vec_map(cfg.map_file);
        t.pad_id = t.map->pad_id;
        std::int32_t max_id = t.map->pad_id;
        for (int b = 0; b < 256; ++b) max_id = std::max(max_id, t.map->byte_to_id[b]);
        t.vocab_size = static_cast<std::int64_t>(max_id) + 1;
        return t;
    }
    if (cfg.scheme == "hex2tok") {
        if (cfg.map_file.empty())
            raise(ErrorCode::ConfigError, "tokenize.map_file is required for scheme hex2tok");
        t.map = tokenize::load_hex2tok_map(cfg.map_file);
        t.compact_ids = true; // model runs on byte+1 ids; map picks embedding rows
        t.pad_id = 0;
        t.vocab_size = 257;
        return t;
    }
    if (cfg.scheme == "subword") {
        if (cfg.vocab_file.empty())
            raise(ErrorCode::ConfigError, "tokenize.vocab_file is required for scheme subword");
        t.subword = tokenize::load_subword_vocab(cfg.vocab_file);
        t.pad_id = t.subword->pad_id;
        t.vocab_size = t.subword->vocab_size;
        return t;
    }
    raise(ErrorCode::ConfigError, "unknown tokenize.scheme '" + cfg.scheme + "'");
}

std::vector<embed::EmbeddingMatrix> resolve_embeddings(const config::EmbedConfig& cfg,
                                                       const Tokenizer& tokenizer,
                                                       const model::CmaeConfig& model_cfg,
                                                       std::uint64_t seed) {
    std::vector<embed::EmbeddingMatrix> tables;
    if (cfg.source == "xavier") {
        std::mt19937_64 mix(seed);
        for (int i = 0; i < 3; ++i) {
            embed::EmbeddingMatrix m =
                embed::xavier_init(model_cfg.vocab_size, model_cfg.embedding_dim, mix());
            m.frozen = cfg.frozen;
            tables.push_back(std::move(m));
        }
        return tables;
    }
    if (cfg.source != "external")
        raise(ErrorCode::ConfigError, "unknown embed.source '" + cfg.source + "'");
    if (cfg.file.empty())
        raise(ErrorCode::ConfigError, "embed.file is required for source external");

    // peek the row count so a huge table is read exactly once
    std::uint32_t file_rows = 0;
    {
        std::ifstream in(cfg.file, std::ios::binary);
        if (!in) raise(ErrorCode::IoError, "cannot open " + cfg.file);
        unsigned char header[13];
        if (!in.read(reinterpret_cast<char*>(header), 13) || std::memcmp(header, "EMB1", 4) != 0)
            raise(ErrorCode::CorruptEmbeddingFile, cfg.file + ": missing EMB1 header");
        file_rows = static_cast<std::uint32_t>(header[4]) |
                    (static_cast<std::uint32_t>(header[5]) << 8) |
                    (static_cast<std::uint32_t>(header[6]) << 16) |
                    (static_cast<std::uint32_t>(header[7]) << 24);
    }

    std::optional<std::vector<std::uint32_t>> selection;
    if (static_cast<std::int64_t>(file_rows) != model_cfg.vocab_size) {
        selection = tokenizer.embedding_selection();
        if (!selection)
            raise(ErrorCode::ConfigError,
                  "external table has " + std::to_string(file_rows) + " rows but the model needs " +
                      std::to_string(model_cfg.vocab_size) +
                      " and tokenizer '" + tokenizer.name + "' provides no row selection");
    }
    embed::EmbeddingMatrix m = embed::load_external_embeddings(cfg.file, selection);
    if (m.dim != model_cfg.embedding_dim)
        raise(ErrorCode::ConfigError,
              "external table dimension " + std::to_string(m.dim) +
                  " does not match model.embedding_dim " +
                  std::to_string(model_cfg.embedding_dim));
    if (m.vocab_size != model_cfg.vocab_size)
        raise(ErrorCode::ConfigError,
              "external table resolves to " + std::to_string(m.vocab_size) +
                  " rows but the model needs " + std::to_string(model_cfg.vocab_size));
    m.frozen = m.frozen || cfg.frozen;
    tables.assign(3, m);
    return tables;
}

namespace {

train::Batch encode_batch(const Tokenizer& tokenizer, std::int64_t max_len,
                          const std::vector<const data::PayloadRecord*>& slice) {
    if (slice.empty()) raise(ErrorCode::InputError, "empty batch");
    std::vector<tokenize::TokenSequence> seqs;
    seqs.reserve(slice.size());
    std::int64_t width = max_len;
    for (const auto* rec : slice) {
        seqs.push_back(tokenizer.encode(rec->payload, max_len));
        if (max_len == tokenize::kMaxLenBatch)
            width = std::max(width, static_cast<std::int64_t>(seqs.back().ids.size()));
    }

    const std::int64_t n = static_cast<std::int64_t>(slice.size());
    train::Batch batch;
    batch.ids = nn::IntTensor::full({n, width}, tokenizer.pad_id);
    batch.labels = nn::IntTensor({n});
    for (std::int64_t r = 0; r < n; ++r) {
        const auto& ids = seqs[static_cast<std::size_t>(r)].ids;
        for (std::size_t i = 0; i < ids.size(); ++i)
            batch.ids[r * width + static_cast<std::int64_t>(i)] = ids[i];
        batch.labels[r] = static_cast<std::int32_t>(slice[static_cast<std::size_t>(r)]->label);
    }
    return batch;
}

} // namespace

train::BatchEncoder make_batch_encoder(const Tokenizer& tokenizer, std::int64_t max_len) {
    return [tokenizer, max_len](const std::vector<const data::PayloadRecord*>& slice) {
        return encode_batch(tokenizer, max_len, slice);
    };
}

InferenceResult run_inference(model::CmaeModel<float>& m,
                              const std::vector<data::PayloadRecord>& records,
                              const Tokenizer& tokenizer, std::int64_t max_len,
                              std::int64_t batch_size) {
    if (batch_size < 1) raise(ErrorCode::ConfigError, "inference batch size must be positive");
    nn::NoGradGuard guard;
    InferenceResult result;
    result.rows.reserve(records.size());

    const auto start = std::chrono::steady_clock::now();
    for (std::size_t begin = 0; begin < records.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(records.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<const data::PayloadRecord*> slice;
        slice.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) slice.push_back(&records[i]);

        const train::Batch batch = encode_batch(tokenizer, max_len, slice);
        auto probs = m.forward(batch.ids, /*training=*/false);
        const std::int64_t classes = probs->value.dim(1);
        for (std::size_t i = begin; i < end; ++i) {
            const std::int64_t r = static_cast<std::int64_t>(i - begin);
            eval::PredictionRow row;
            row.source_id = records[i].source_id;
            row.actual = static_cast<int>(records[i].label);
            std::int64_t best = 0;
            for (std::int64_t c = 0; c < classes; ++c) {
                const double p = static_cast<double>(probs->value[r * classes + c]);
                row.probabilities[static_cast<std::size_t>(c)] = p;
                if (p > row.probabilities[static_cast<std::size_t>(best)]) best = c;
            }
            row.predicted = static_cast<int>(best);
            result.rows.push_back(std::move(row));
        }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.predictions_per_second =
        static_cast<double>(records.size()) / std::max(seconds, 1e-9);
    return result;
}

} // namespace cmae::pipeline
