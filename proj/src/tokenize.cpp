#include "cmae/tokenize.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace cmae::tokenize {

namespace {

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1; // map files require lowercase hex
}

std::vector<std::string> read_lines(const std::string& path, ErrorCode open_error) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(open_error, "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::int32_t parse_id(const std::string& text, const std::string& context, ErrorCode code) {
    if (text.empty()) raise(code, context + ": empty token id");
    for (char c : text)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            raise(code, context + ": token id '" + text + "' is not a non-negative integer");
    errno = 0;
    const long long v = std::strtoll(text.c_str(), nullptr, 10);
    if (errno != 0 || v > INT32_MAX) raise(code, context + ": token id '" + text + "' out of range");
    return static_cast<std::int32_t>(v);
}

// shared reader for the 256-byte map format; `strict` demands injectivity
// with pad outside the image, the lenient mode additionally allows bytes to
// carry the pad id.
TokenMap load_byte_map(const std::string& path, bool strict) {
    const auto lines = read_lines(path, ErrorCode::IoError);
    TokenMap map;
    std::array<bool, 256> seen{};
    bool pad_seen = false;
    int byte_lines = 0;

    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        const std::string context = path + " line " + std::to_string(i + 1);
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            raise(ErrorCode::InvalidTokenMap, context + ": expected <byte><TAB><id>");
        const std::string key = line.substr(0, tab);
        const std::int32_t id = parse_id(line.substr(tab + 1), context, ErrorCode::InvalidTokenMap);

        if (key == "PAD") {
            if (pad_seen) raise(ErrorCode::InvalidTokenMap, context + ": duplicate PAD line");
            pad_seen = true;
            map.pad_id = id;
            continue;
        }
        if (key.size() != 2 || hex_digit(key[0]) < 0 || hex_digit(key[1]) < 0)
            raise(ErrorCode::InvalidTokenMap,
                  context + ": key '" + key + "' is not a lowercase hex byte or PAD");
        const int b = hex_digit(key[0]) * 16 + hex_digit(key[1]);
        if (seen[static_cast<std::size_t>(b)])
            raise(ErrorCode::InvalidTokenMap, context + ": duplicate byte " + key);
        seen[static_cast<std::size_t>(b)] = true;
        ++byte_lines;
        map.byte_to_id[static_cast<std::size_t>(b)] = id;
    }

    if (byte_lines != 256)
        raise(ErrorCode::InvalidTokenMap,
              path + ": expected 256 byte entries, found " + std::to_string(byte_lines));
    if (!pad_seen) raise(ErrorCode::InvalidTokenMap, path + ": missing PAD entry");

    std::unordered_set<std::int32_t> ids;
    for (int b = 0; b < 256; ++b) {
        const std::int32_t id = map.byte_to_id[static_cast<std::size_t>(b)];
        if (id == map.pad_id) {
            if (strict)
                raise(ErrorCode::InvalidTokenMap,
                      path + ": pad id " + std::to_string(id) + " appears in the byte table");
            continue; // lenient: below-min-count byte encodes to pad
        }
        if (!ids.insert(id).second)
            raise(ErrorCode::InvalidTokenMap,
                  path + ": token id " + std::to_string(id) + " assigned to more than one byte");
    }
    map.provenance = strict ? MapProvenance::External : MapProvenance::Word2Vec;
    return map;
}

} // namespace

TokenMap hex2int_map() {
    TokenMap map;
    map.pad_id = 0;
    map.provenance = MapProvenance::Hex2Int;
    for (int b = 0; b < 256; ++b) map.byte_to_id[static_cast<std::size_t>(b)] = b + 1;
    return map;
}

TokenMap load_hex2tok_map(const std::string& path) { return load_byte_map(path, true); }

TokenMap load_word2vec_map(const std::string& path) { return load_byte_map(path, false); }

void save_token_map(const std::string& path, const TokenMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    static const char* digits = "0123456789abcdef";
    for (int b = 0; b < 256; ++b)
        out << digits[b >> 4] << digits[b & 0x0f] << '\t'
            << map.byte_to_id[static_cast<std::size_t>(b)] << '\n';
    out << "PAD\t" << map.pad_id << '\n';
    if (!out) raise(ErrorCode::IoError, "failed writing " + path);
}

TokenSequence encode_bytes(const std::vector<std::uint8_t>& payload, const TokenMap& map,
                           std::int64_t max_len) {
    TokenSequence seq;
    seq.pad_id = map.pad_id;
    seq.max_len = max_len;
    const std::int64_t n = static_cast<std::int64_t>(payload.size());
    const std::int64_t keep = max_len == kMaxLenBatch ? n : std::min(n, max_len);
    const std::int64_t out_len = max_len == kMaxLenBatch ? n : max_len;
    seq.ids.assign(static_cast<std::size_t>(out_len), map.pad_id);
    for (std::int64_t i = 0; i < keep; ++i)
        seq.ids[static_cast<std::size_t>(i)] = map[payload[static_cast<std::size_t>(i)]];
    seq.true_length = keep;
    return seq;
}

std::vector<std::uint8_t> decode(const TokenSequence& seq, const TokenMap& map) {
    std::unordered_map<std::int32_t, std::uint8_t> inverse;
    inverse.reserve(256);
    for (int b = 0; b < 256; ++b) {
        const std::int32_t id = map.byte_to_id[static_cast<std::size_t>(b)];
        if (id != map.pad_id) inverse.emplace(id, static_cast<std::uint8_t>(b));
    }

    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<std::size_t>(seq.true_length));
    for (std::int64_t i = 0; i < seq.true_length; ++i) {
        const std::int32_t id = seq.ids[static_cast<std::size_t>(i)];
        if (id == seq.pad_id) continue; // lenient maps encode rare bytes as pad
        const auto it = inverse.find(id);
        if (it == inverse.end())
            raise(ErrorCode::UnknownToken,
                  "token id " + std::to_string(id) + " at position " + std::to_string(i) +
                      " is not in the map's image");
        bytes.push_back(it->second);
    }
    return bytes;
}

SubwordModel SubwordModel::from_entries(
    const std::vector<std::pair<std::string, std::int32_t>>& entries, std::int32_t pad_id) {
    SubwordModel model;
    model.pad_id = pad_id;
    std::int64_t max_id = pad_id;
    std::array<bool, 256> single{};
    for (const auto& [token, id] : entries) {
        if (token.empty()) raise(ErrorCode::InvalidVocab, "empty token string");
        if (id < 0) raise(ErrorCode::InvalidVocab, "negative token id");
        if (id == pad_id)
            raise(ErrorCode::InvalidVocab,
                  "token id " + std::to_string(id) + " collides with the pad id");
        if (!model.vocabulary.emplace(token, id).second)
            raise(ErrorCode::InvalidVocab, "duplicate token entry");
        model.max_token_len =
            std::max(model.max_token_len, static_cast<std::int64_t>(token.size()));
        max_id = std::max(max_id, static_cast<std::int64_t>(id));
        if (token.size() == 1) single[static_cast<unsigned char>(token[0])] = true;
    }
    for (int b = 0; b < 256; ++b)
        if (!single[static_cast<std::size_t>(b)])
            raise(ErrorCode::InvalidVocab,
                  "vocabulary lacks the single-byte token for 0x" +
                      [b] {
                          static const char* digits = "0123456789abcdef";
                          return std::string{digits[b >> 4], digits[b & 0x0f]};
                      }());
    model.vocab_size = max_id + 1;
    return model;
}

std::string escape_token_bytes(const std::string& raw) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned char c : raw) {
        switch (c) {
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\\': out += "\\\\"; break;
            default:
                if (c >= 0x20 && c <= 0x7e) {
                    out.push_back(static_cast<char>(c));
                } else {
                    out += "\\x";
                    out.push_back(digits[c >> 4]);
                    out.push_back(digits[c & 0x0f]);
                }
        }
    }
    return out;
}

std::string unescape_token_bytes(const std::string& escaped) {
    std::string out;
    for (std::size_t i = 0; i < escaped.size(); ++i) {
        const char c = escaped[i];
        if (c != '\\') {
            out.push_back(c);
            continue;
        }
        if (i + 1 >= escaped.size())
            raise(ErrorCode::InvalidVocab, "dangling escape in token '" + escaped + "'");
        const char e = escaped[++i];
        switch (e) {
            case 't': out.push_back('\t'); break;
            case 'n': out.push_back('\n'); break;
            case 'r': out.push_back('\r'); break;
            case '\\': out.push_back('\\'); break;
            case 'x': {
                if (i + 2 >= escaped.size())
                    raise(ErrorCode::InvalidVocab, "truncated \\x escape in token");
                const int hi = hex_digit(escaped[i + 1]);
                const int lo = hex_digit(escaped[i + 2]);
                if (hi < 0 || lo < 0)
                    raise(ErrorCode::InvalidVocab, "invalid \\x escape in token '" + escaped + "'");
                out.push_back(static_cast<char>(hi * 16 + lo));
                i += 2;
                break;
            }
            default:
                raise(ErrorCode::InvalidVocab,
                      std::string("unknown escape '\\") + e + "' in token");
        }
    }
    return out;
}

SubwordModel load_subword_vocab(const std::string& path) {
    const auto lines = read_lines(path, ErrorCode::IoError);
    std::vector<std::pair<std::string, std::int32_t>> entries;
    std::optional<std::int32_t> pad;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        const std::string context = path + " line " + std::to_string(i + 1);
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            raise(ErrorCode::InvalidVocab, context + ": expected <token><TAB><id>");
        const std::string key = line.substr(0, tab);
        const std::int32_t id = parse_id(line.substr(tab + 1), context, ErrorCode::InvalidVocab);
        if (key == "!pad") {
            if (pad) raise(ErrorCode::InvalidVocab, context + ": duplicate !pad directive");
            pad = id;
            continue;
        }
        entries.emplace_back(unescape_token_bytes(key), id);
    }
    if (!pad) raise(ErrorCode::InvalidVocab, path + ": missing !pad directive");
    try {
        return SubwordModel::from_entries(entries, *pad);
    } catch (const Error& e) {
        raise(e.code(), path + ": " + e.what());
    }
}

void save_subword_vocab(const std::string& path, const SubwordModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out << "!pad\t" << model.pad_id << '\n';
    // deterministic order: by id, then token text
    std::vector<std::pair<std::string, std::int32_t>> entries(model.vocabulary.begin(),
                                                              model.vocabulary.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    for (const auto& [token, id] : entries) out << escape_token_bytes(token) << '\t' << id << '\n';
    if (!out) raise(ErrorCode::IoError, "failed writing " + path);
}

TokenSequence encode_subword(const std::vector<std::uint8_t>& payload, const SubwordModel& model,
                             std::int64_t max_len) {
    std::vector<std::int32_t> tokens;
    tokens.reserve(payload.size());
    const char* chars = reinterpret_cast<const char*>(payload.data());
    std::size_t pos = 0;
    std::string probe;
    while (pos < payload.size()) {
        const std::size_t longest =
            std::min<std::size_t>(static_cast<std::size_t>(model.max_token_len),
                                  payload.size() - pos);
        std::size_t matched = 0;
        std::int32_t matched_id = 0;
        for (std::size_t len = longest; len >= 1; --len) {
            probe.assign(chars + pos, len);
            const auto it = model.vocabulary.find(probe);
            if (it != model.vocabulary.end()) {
                matched = len;
                matched_id = it->second;
                break;
            }
        }
        // single-byte fallback is guaranteed by the vocabulary invariant
        tokens.push_back(matched_id);
        pos += matched;
    }

    TokenSequence seq;
    seq.pad_id = model.pad_id;
    seq.max_len = max_len;
    const std::int64_t n = static_cast<std::int64_t>(tokens.size());
    const std::int64_t keep = max_len == kMaxLenBatch ? n : std::min(n, max_len);
    const std::int64_t out_len = max_len == kMaxLenBatch ? n : max_len;
    seq.ids.assign(static_cast<std::size_t>(out_len), model.pad_id);
    std::copy_n(tokens.begin(), keep, seq.ids.begin());
    seq.true_length = keep;
    return seq;
}

} // namespace cmae::tokenize
