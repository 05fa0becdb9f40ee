#pragma once

// glue between configuration and the typed modules: tokenizer resolution,
// embedding-table resolution, batch encoding, and batched inference.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmae/config.hpp"
#include "cmae/embed.hpp"
#include "cmae/metrics.hpp"
#include "cmae/model.hpp"
#include "cmae/tokenize.hpp"
#include "cmae/train.hpp"

namespace cmae::pipeline {

// a resolved tokenizer. model-space ids are what the network consumes: for
// byte->id maps whose ids are sparse in a huge external vocabulary
// (hex2tok), the model runs on the compact id b+1 with pad 0 and the map is
// used to select the matching embedding rows instead.
struct Tokenizer {
    std::string name;
    std::int32_t pad_id = 0;        // model space
    std::int64_t vocab_size = 257;  // model space (embedding rows)
    std::optional<tokenize::TokenMap> map;
    std::optional<tokenize::SubwordModel> subword;
    bool compact_ids = false; // hex2tok: display ids differ from model ids

    // padded/truncated model-space encoding (max_len 0 = no pad/truncate)
    tokenize::TokenSequence encode(const std::vector<std::uint8_t>& payload,
                                   std::int64_t max_len) const;
    // raw map/vocab ids as an operator would expect to see them
    tokenize::TokenSequence encode_display(const std::vector<std::uint8_t>& payload,
                                           std::int64_t max_len) const;
    // hex2tok: embedding rows to pull from an external table, pad row first
    std::optional<std::vector<std::uint32_t>> embedding_selection() const;
};

Tokenizer make_tokenizer(const config::TokenizeConfig& cfg);

// one embedding table per front-end block; an external source yields three
// copies of the same matrix, xavier yields three independently seeded ones.
std::vector<embed::EmbeddingMatrix> resolve_embeddings(const config::EmbedConfig& cfg,
                                                       const Tokenizer& tokenizer,
                                                       const model::CmaeConfig& model_cfg,
                                                       std::uint64_t seed);

// batch encoder for the training loop; with max_len 0 each batch is padded
// to its own longest sequence.
train::BatchEncoder make_batch_encoder(const Tokenizer& tokenizer, std::int64_t max_len);

struct InferenceResult {
    std::vector<eval::PredictionRow> rows;
    double predictions_per_second = 0;
};

// batched forward passes in inference mode over labeled records.
InferenceResult run_inference(model::CmaeModel<float>& m,
                              const std::vector<data::PayloadRecord>& records,
                              const Tokenizer& tokenizer, std::int64_t max_len,
                              std::int64_t batch_size);

} // namespace cmae::pipeline
