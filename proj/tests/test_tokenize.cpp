#include "doctest.h"

#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cmae/data.hpp"
#include "cmae/rng.hpp"
#include "cmae/tokenize.hpp"
#include "testutil.hpp"

using namespace cmae;
using testutil::raises;
using testutil::temp_path;
using testutil::write_file;

namespace {

// map file with byte b -> b + shift, matching the published byte-level table
// of an LLM tokenizer when shift = 3
std::string byte_map_text(int shift, int pad_id) {
    static const char* digits = "0123456789abcdef";
    std::ostringstream out;
    for (int b = 0; b < 256; ++b)
        out << digits[b >> 4] << digits[b & 0x0f] << '\t' << (b + shift) << '\n';
    out << "PAD\t" << pad_id << '\n';
    return out.str();
}

std::vector<std::uint8_t> random_payload(std::mt19937_64& gen, std::uint64_t max_size) {
    std::vector<std::uint8_t> payload(rng::bounded(gen, max_size + 1));
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng::bounded(gen, 256));
    return payload;
}

// entries covering all 256 single bytes (id 100+b) plus overrides/extras
std::vector<std::pair<std::string, std::int32_t>> full_single_byte_entries(
    const std::map<std::string, std::int32_t>& overrides,
    const std::vector<std::pair<std::string, std::int32_t>>& extras) {
    std::vector<std::pair<std::string, std::int32_t>> entries;
    for (int b = 0; b < 256; ++b) {
        const std::string token(1, static_cast<char>(b));
        const auto it = overrides.find(token);
        entries.emplace_back(token, it != overrides.end() ? it->second : 100 + b);
    }
    entries.insert(entries.end(), extras.begin(), extras.end());
    return entries;
}

std::vector<std::uint8_t> ascii_bytes(const std::string& text) {
    return std::vector<std::uint8_t>(text.begin(), text.end());
}

} // namespace

TEST_SUITE("tokenize") {

TEST_CASE("compact byte map is identity plus one") {
    const auto map = tokenize::hex2int_map();
    CHECK(map.pad_id == 0);
    CHECK(map[0x00] == 1);
    CHECK(map[0xc1] == 194);
    CHECK(map[0xFF] == 256);
    for (int b = 0; b < 256; ++b) CHECK(map[static_cast<std::uint8_t>(b)] == b + 1);
}

TEST_CASE("byte encoding worked examples") {
    const auto map = tokenize::hex2int_map();

    const auto seq = tokenize::encode_bytes({0x00, 0xc1, 0xb1}, map, 5);
    CHECK(seq.ids == std::vector<std::int32_t>{1, 194, 178, 0, 0});
    CHECK(seq.true_length == 3);
    CHECK(seq.pad_id == 0);
    CHECK(seq.max_len == 5);

    const auto empty = tokenize::encode_bytes({}, map, 4);
    CHECK(empty.ids == std::vector<std::int32_t>{0, 0, 0, 0});
    CHECK(empty.true_length == 0);

    std::vector<std::uint8_t> big(2000, 0xAB);
    const auto truncated = tokenize::encode_bytes(big, map, 1500);
    CHECK(truncated.ids.size() == 1500);
    CHECK(truncated.true_length == 1500);
    for (const auto id : truncated.ids) CHECK(id == 0xAB + 1);
}

TEST_CASE("external byte map worked example") {
    const std::string path = temp_path("llm.map");
    write_file(path, byte_map_text(3, 0));
    const auto map = tokenize::load_hex2tok_map(path);
    CHECK(map.pad_id == 0);
    CHECK(map[0x00] == 3);
    CHECK(map[0xc1] == 196);
    CHECK(map[0xb1] == 180);
    const auto seq = tokenize::encode_bytes({0x00, 0xc1, 0xb1, 0x00}, map, 0);
    CHECK(seq.ids == std::vector<std::int32_t>{3, 196, 180, 3});
    CHECK(map.provenance == tokenize::MapProvenance::External);
}

TEST_CASE("identity-plus-one map file equals the builtin") {
    const std::string path = temp_path("identity.map");
    write_file(path, byte_map_text(1, 0));
    const auto loaded = tokenize::load_hex2tok_map(path);
    const auto builtin = tokenize::hex2int_map();
    CHECK(loaded.pad_id == builtin.pad_id);
    CHECK(loaded.byte_to_id == builtin.byte_to_id);
}

TEST_CASE("strict map loader rejects malformed tables") {
    const std::string path = temp_path("bad.map");

    // 255 byte lines (ff missing)
    std::string text = byte_map_text(1, 0);
    text = text.substr(0, text.find("ff\t")) + "PAD\t0\n";
    write_file(path, text);
    std::string msg;
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }, &msg));
    CHECK(msg.find("255") != std::string::npos);

    // duplicate byte
    write_file(path, byte_map_text(1, 0) + "00\t999\n");
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }));

    // missing PAD
    text = byte_map_text(1, 0);
    write_file(path, text.substr(0, text.find("PAD")));
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }));

    // non-injective: two bytes share an id
    text = byte_map_text(1, 0);
    const auto at = text.find("01\t2\n");
    text = text.substr(0, at) + "01\t1\n" + text.substr(at + 5);
    write_file(path, text);
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }));

    // pad id appears in the byte table: strict rejects, lenient accepts
    write_file(path, byte_map_text(0, 0)); // byte 00 -> 0 == pad
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }));
    const auto lenient = tokenize::load_word2vec_map(path);
    CHECK(lenient[0x00] == lenient.pad_id);
    CHECK(lenient.provenance == tokenize::MapProvenance::Word2Vec);

    // uppercase hex key / garbage id
    write_file(path, "FF\t1\n");
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }));
    write_file(path, "00\t-3\n");
    CHECK(raises(ErrorCode::InvalidTokenMap, [&] { tokenize::load_hex2tok_map(path); }));
}

TEST_CASE("lenient map sends rare bytes to pad and decode skips them") {
    const std::string path = temp_path("w2v.map");
    // byte 0x10 filtered out (-> pad 0), everything else b+1
    std::string text = byte_map_text(1, 0);
    const auto at = text.find("10\t17\n");
    text = text.substr(0, at) + "10\t0\n" + text.substr(at + 6);
    write_file(path, text);
    const auto map = tokenize::load_word2vec_map(path);
    const auto seq = tokenize::encode_bytes({0x41, 0x10, 0x42}, map, 0);
    CHECK(seq.ids == std::vector<std::int32_t>{0x42, 0, 0x43});
    CHECK(seq.true_length == 3);
    CHECK(tokenize::decode(seq, map) == std::vector<std::uint8_t>{0x41, 0x42});
}

TEST_CASE("decode worked examples") {
    const auto map = tokenize::hex2int_map();
    tokenize::TokenSequence seq;
    seq.ids = {1, 194, 178, 0, 0};
    seq.true_length = 3;
    seq.pad_id = 0;
    CHECK(tokenize::decode(seq, map) == std::vector<std::uint8_t>{0x00, 0xc1, 0xb1});
    seq.true_length = 5; // pads inside the window are skipped, not errors
    CHECK(tokenize::decode(seq, map) == std::vector<std::uint8_t>{0x00, 0xc1, 0xb1});

    seq.ids = {1, 300, 2};
    seq.true_length = 3;
    std::string msg;
    CHECK(raises(ErrorCode::UnknownToken, [&] { tokenize::decode(seq, map); }, &msg));
    CHECK(msg.find("300") != std::string::npos);
}

TEST_CASE("round trip over 10000 payloads") {
    const auto map = tokenize::hex2int_map();
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 10000; ++trial) {
        const auto payload = random_payload(gen, 64);
        const auto seq = tokenize::encode_bytes(payload, map, tokenize::kMaxLenBatch);
        CHECK(tokenize::decode(seq, map) == payload);
    }
}

TEST_CASE("pad exclusivity and truncation prefix properties") {
    const auto map = tokenize::hex2int_map();
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 500; ++trial) {
        const auto payload = random_payload(gen, 96);
        const std::int64_t max_len = 1 + static_cast<std::int64_t>(rng::bounded(gen, 96));
        const auto seq = tokenize::encode_bytes(payload, map, max_len);
        REQUIRE(static_cast<std::int64_t>(seq.ids.size()) == max_len);
        for (std::int64_t i = 0; i < max_len; ++i) {
            if (i < seq.true_length)
                CHECK(seq.ids[static_cast<std::size_t>(i)] != seq.pad_id);
            else
                CHECK(seq.ids[static_cast<std::size_t>(i)] == seq.pad_id);
        }
        // truncated ids match the untruncated prefix
        const auto whole = tokenize::encode_bytes(payload, map, tokenize::kMaxLenBatch);
        for (std::int64_t i = 0; i < seq.true_length; ++i)
            CHECK(seq.ids[static_cast<std::size_t>(i)] == whole.ids[static_cast<std::size_t>(i)]);
        // decode of a truncation is the payload prefix
        const auto decoded = tokenize::decode(seq, map);
        const std::vector<std::uint8_t> prefix(
            payload.begin(),
            payload.begin() + std::min<std::size_t>(payload.size(),
                                                    static_cast<std::size_t>(max_len)));
        CHECK(decoded == prefix);
    }
}

TEST_CASE("token map file round trip") {
    const auto original = tokenize::hex2int_map();
    const std::string path = temp_path("rt.map");
    tokenize::save_token_map(path, original);
    const auto loaded = tokenize::load_hex2tok_map(path);
    CHECK(loaded.byte_to_id == original.byte_to_id);
    CHECK(loaded.pad_id == original.pad_id);
}

TEST_CASE("subword encoding: single-character vocabulary") {
    const auto model = tokenize::SubwordModel::from_entries(
        full_single_byte_entries({{"0", 29900}, {"c", 29883}}, {}), 0);
    const auto seq = tokenize::encode_subword(ascii_bytes("00c1b1"), model, 0);
    CHECK(seq.ids == std::vector<std::int32_t>{29900, 29900, 29883, 100 + '1', 100 + 'b', 100 + '1'});
    CHECK(seq.true_length == 6);
}

TEST_CASE("subword encoding: greedy longest match") {
    const auto model = tokenize::SubwordModel::from_entries(
        full_single_byte_entries({{"c", 66}, {"1", 16}}, {{"00", 410}}), 0);
    CHECK(model.max_token_len == 2);
    const auto seq = tokenize::encode_subword(ascii_bytes("00c1b1"), model, 0);
    CHECK(seq.ids == std::vector<std::int32_t>{410, 66, 16, 100 + 'b', 16});
    CHECK(seq.true_length == 5);

    // padding and truncation behave like the byte encoder
    const auto padded = tokenize::encode_subword(ascii_bytes("00c1b1"), model, 8);
    CHECK(padded.ids == std::vector<std::int32_t>{410, 66, 16, 100 + 'b', 16, 0, 0, 0});
    CHECK(padded.true_length == 5);
    const auto cut = tokenize::encode_subword(ascii_bytes("00c1b1"), model, 3);
    CHECK(cut.ids == std::vector<std::int32_t>{410, 66, 16});
    CHECK(cut.true_length == 3);
}

TEST_CASE("subword encoding with only single-byte tokens equals byte encoding") {
    std::vector<std::pair<std::string, std::int32_t>> entries;
    for (int b = 0; b < 256; ++b) entries.emplace_back(std::string(1, static_cast<char>(b)), b + 1);
    const auto model = tokenize::SubwordModel::from_entries(entries, 0);
    const auto map = tokenize::hex2int_map();
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto payload = random_payload(gen, 80);
        const auto a = tokenize::encode_subword(payload, model, 64);
        const auto b = tokenize::encode_bytes(payload, map, 64);
        CHECK(a.ids == b.ids);
        CHECK(a.true_length == b.true_length);
    }
}

TEST_CASE("subword encoding is total and reconstructs the input") {
    const auto entries = full_single_byte_entries(
        {}, {{"GET ", 500}, {"HTTP", 501}, {"\r\n", 502}, {std::string("\x00\x00", 2), 503}});
    const auto model = tokenize::SubwordModel::from_entries(entries, 0);
    std::map<std::int32_t, std::string> reverse;
    for (const auto& [token, id] : entries) reverse[id] = token;

    std::mt19937_64 gen(9);
    for (int trial = 0; trial < 500; ++trial) {
        auto payload = random_payload(gen, 60);
        if (trial % 3 == 0) { // make multi-byte matches common
            const auto text = ascii_bytes("GET / HTTP/1.0\r\n");
            payload.insert(payload.begin(), text.begin(), text.end());
        }
        const auto seq = tokenize::encode_subword(payload, model, 0);
        std::string rebuilt;
        for (const auto id : seq.ids) rebuilt += reverse.at(id);
        CHECK(rebuilt == std::string(payload.begin(), payload.end()));
    }
}

TEST_CASE("subword vocabulary validation") {
    // missing a single-byte token
    std::vector<std::pair<std::string, std::int32_t>> partial;
    for (int b = 1; b < 256; ++b) partial.emplace_back(std::string(1, static_cast<char>(b)), b);
    CHECK(raises(ErrorCode::InvalidVocab,
                 [&] { tokenize::SubwordModel::from_entries(partial, 0); }));
    // id collides with pad
    CHECK(raises(ErrorCode::InvalidVocab, [&] {
        tokenize::SubwordModel::from_entries(full_single_byte_entries({{"a", 0}}, {}), 0);
    }));
    // duplicate token
    CHECK(raises(ErrorCode::InvalidVocab, [&] {
        tokenize::SubwordModel::from_entries(full_single_byte_entries({}, {{"a", 999}}), 0);
    }));
    // vocab_size covers the largest id
    const auto model = tokenize::SubwordModel::from_entries(
        full_single_byte_entries({{"0", 29900}}, {}), 0);
    CHECK(model.vocab_size == 29901);
}

TEST_CASE("token escaping") {
    CHECK(tokenize::escape_token_bytes("\t") == "\\t");
    CHECK(tokenize::escape_token_bytes("\n") == "\\n");
    CHECK(tokenize::escape_token_bytes("a\\b") == "a\\\\b");
    CHECK(tokenize::escape_token_bytes(std::string("\x01", 1)) == "\\x01");
    CHECK(tokenize::escape_token_bytes("GET ") == "GET ");
    for (int b = 0; b < 256; ++b) {
        const std::string raw(1, static_cast<char>(b));
        CHECK(tokenize::unescape_token_bytes(tokenize::escape_token_bytes(raw)) == raw);
    }
    CHECK(raises(ErrorCode::InvalidVocab, [] { tokenize::unescape_token_bytes("\\q"); }));
    CHECK(raises(ErrorCode::InvalidVocab, [] { tokenize::unescape_token_bytes("\\x9"); }));
    CHECK(raises(ErrorCode::InvalidVocab, [] { tokenize::unescape_token_bytes("abc\\"); }));
}

TEST_CASE("subword vocab file round trip") {
    const auto model = tokenize::SubwordModel::from_entries(
        full_single_byte_entries({}, {{"GET ", 500}, {"\r\n\r\n", 501},
                                      {std::string("\x00\xff", 2), 502}}),
        7);
    const std::string path = temp_path("vocab.tsv");
    tokenize::save_subword_vocab(path, model);
    const auto loaded = tokenize::load_subword_vocab(path);
    CHECK(loaded.pad_id == model.pad_id);
    CHECK(loaded.vocab_size == model.vocab_size);
    CHECK(loaded.max_token_len == model.max_token_len);
    CHECK(loaded.vocabulary == model.vocabulary);

    write_file(path, "a\t1\n"); // no !pad, vocabulary incomplete
    CHECK(raises(ErrorCode::InvalidVocab, [&] { tokenize::load_subword_vocab(path); }));
}

} // TEST_SUITE
