#include "cmae/embed.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "cmae/rng.hpp"

namespace cmae::embed {

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(v & 0xFF), static_cast<unsigned char>((v >> 8) & 0xFF),
        static_cast<unsigned char>((v >> 16) & 0xFF), static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

} // namespace

EmbeddingMatrix xavier_init(std::int64_t vocab_size, std::int64_t dim, std::uint64_t seed) {
    if (vocab_size < 1 || dim < 1)
        raise(ErrorCode::ConfigError, "embedding dimensions must be positive");
    EmbeddingMatrix m;
    m.vocab_size = vocab_size;
    m.dim = dim;
    m.frozen = false;
    m.provenance = Provenance::Xavier;
    m.weights.resize(static_cast<std::size_t>(vocab_size * dim));
    const double bound = std::sqrt(6.0 / static_cast<double>(vocab_size + dim));
    std::mt19937_64 gen(seed);
    for (auto& w : m.weights)
        w = static_cast<float>((2.0 * rng::uniform01(gen) - 1.0) * bound);
    return m;
}

void save_embeddings(const std::string& path, const EmbeddingMatrix& matrix) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out.write("EMB1", 4);
    write_u32(out, static_cast<std::uint32_t>(matrix.vocab_size));
    write_u32(out, static_cast<std::uint32_t>(matrix.dim));
    const unsigned char frozen = matrix.frozen ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&frozen), 1);
    for (float w : matrix.weights) {
        std::uint32_t bits;
        std::memcpy(&bits, &w, 4);
        write_u32(out, bits);
    }
    if (!out) raise(ErrorCode::IoError, "failed writing " + path);
}

EmbeddingMatrix load_external_embeddings(
    const std::string& path, const std::optional<std::vector<std::uint32_t>>& selected_rows) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 13 || std::memcmp(bytes.data(), "EMB1", 4) != 0)
        raise(ErrorCode::CorruptEmbeddingFile, path + ": missing EMB1 header");
    const std::uint32_t rows = read_u32(bytes.data() + 4);
    const std::uint32_t dim = read_u32(bytes.data() + 8);
    const bool frozen = bytes[12] != 0;
    const std::size_t expected = 13 + static_cast<std::size_t>(rows) * dim * 4;
    if (bytes.size() != expected)
        raise(ErrorCode::CorruptEmbeddingFile,
              path + ": expected " + std::to_string(expected) + " bytes for " +
                  std::to_string(rows) + "x" + std::to_string(dim) + ", found " +
                  std::to_string(bytes.size()));

    auto read_row_value = [&](std::uint64_t row, std::uint32_t col) {
        const std::uint32_t bits = read_u32(bytes.data() + 13 + (row * dim + col) * 4);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    };

    EmbeddingMatrix m;
    m.dim = dim;
    m.frozen = frozen;
    m.provenance = Provenance::External;
    if (!selected_rows) {
        m.vocab_size = rows;
        m.weights.resize(static_cast<std::size_t>(rows) * dim);
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < dim; ++c)
                m.weights[static_cast<std::size_t>(r) * dim + c] = read_row_value(r, c);
        return m;
    }

    for (std::uint32_t src : *selected_rows)
        if (src >= rows)
            raise(ErrorCode::InvalidSelection,
                  "selected row " + std::to_string(src) + " outside table of " +
                      std::to_string(rows) + " rows");
    m.vocab_size = static_cast<std::int64_t>(selected_rows->size());
    m.weights.resize(selected_rows->size() * dim);
    for (std::size_t out_row = 0; out_row < selected_rows->size(); ++out_row)
        for (std::uint32_t c = 0; c < dim; ++c)
            m.weights[out_row * dim + c] = read_row_value((*selected_rows)[out_row], c);
    return m;
}

std::vector<std::uint32_t> selection_from_map(const tokenize::TokenMap& map) {
    std::vector<std::uint32_t> selection;
    selection.reserve(257);
    selection.push_back(static_cast<std::uint32_t>(map.pad_id));
    for (int b = 0; b < 256; ++b)
        selection.push_back(static_cast<std::uint32_t>(map.byte_to_id[static_cast<std::size_t>(b)]));
    return selection;
}

} // namespace cmae::embed
