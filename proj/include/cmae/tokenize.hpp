#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmae/errors.hpp"

namespace cmae::tokenize {

// kMaxLenBatch means "pad to the longest sequence in the batch" and is only
// meaningful to the batch encoder; single-sequence encoders treat it as
// "no padding, no truncation".
inline constexpr std::int64_t kMaxLenBatch = 0;

struct TokenSequence {
    std::vector<std::int32_t> ids;
    std::int64_t true_length = 0; // count of non-pad tokens
    std::int32_t pad_id = 0;
    std::int64_t max_len = kMaxLenBatch;
};

enum class MapProvenance { Hex2Int, Word2Vec, External };

// byte -> token id over all 256 byte values plus a pad id. hex2int and
// external maps are injective with pad outside the image; word2vec maps may
// send below-min-count bytes to pad (they have no learned vector).
struct TokenMap {
    std::array<std::int32_t, 256> byte_to_id{};
    std::int32_t pad_id = 0;
    MapProvenance provenance = MapProvenance::Hex2Int;

    std::int32_t operator[](std::uint8_t b) const { return byte_to_id[b]; }
};

// pad 0, byte b -> b + 1; vocabulary size 257.
TokenMap hex2int_map();

// strict loader: exactly 256 `xx<TAB>id` lines plus `PAD<TAB>id`, injective,
// pad not in the image. used for external-LLM byte maps.
TokenMap load_hex2tok_map(const std::string& path);

// lenient loader for word2vec vocabularies: same file format, but bytes may
// carry the pad id (filtered by min_count); non-pad ids must stay injective.
TokenMap load_word2vec_map(const std::string& path);

void save_token_map(const std::string& path, const TokenMap& map);

TokenSequence encode_bytes(const std::vector<std::uint8_t>& payload,
                           const TokenMap& map,
                           std::int64_t max_len);

std::vector<std::uint8_t> decode(const TokenSequence& seq, const TokenMap& map);

// greedy longest-match sub-word segmentation over raw bytes. the vocabulary
// must contain every single byte (that set doubles as the byte-fallback
// table), so encoding is total.
struct SubwordModel {
    std::unordered_map<std::string, std::int32_t> vocabulary;
    std::int32_t pad_id = 0;
    std::int64_t vocab_size = 0;  // ids are < vocab_size
    std::int64_t max_token_len = 1;

    static SubwordModel from_entries(const std::vector<std::pair<std::string, std::int32_t>>& entries,
                                     std::int32_t pad_id);
};

// vocab file: `<escaped-token><TAB><id>` lines plus one `!pad<TAB><id>`
// directive. escapes: \t \n \r \\ and \xHH for non-printable bytes.
SubwordModel load_subword_vocab(const std::string& path);
void save_subword_vocab(const std::string& path, const SubwordModel& model);

std::string escape_token_bytes(const std::string& raw);
std::string unescape_token_bytes(const std::string& escaped);

TokenSequence encode_subword(const std::vector<std::uint8_t>& payload,
                             const SubwordModel& model,
                             std::int64_t max_len);

} // namespace cmae::tokenize
