#include "cmae/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cmae::checkpoint {

namespace {

std::string num(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

std::string kernels_csv(const std::vector<std::int64_t>& ks) {
    std::string s;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(ks[i]);
    }
    return s;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
    raise(ErrorCode::CorruptCheckpoint, path + ": " + why);
}

std::int64_t parse_int(const std::string& path, const std::string& text) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) corrupt(path, "malformed integer '" + text + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        corrupt(path, "malformed integer '" + text + "'");
    }
}

double parse_double(const std::string& path, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) corrupt(path, "malformed number '" + text + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        corrupt(path, "malformed number '" + text + "'");
    }
}

struct ParamRow {
    std::string name;
    std::vector<std::int64_t> shape;
    bool trainable = true;
};

bool config_equal(const model::CmaeConfig& a, const model::CmaeConfig& b) {
    return a.vocab_size == b.vocab_size && a.embedding_dim == b.embedding_dim &&
           a.freeze_embeddings == b.freeze_embeddings && a.cab_filters1 == b.cab_filters1 &&
           a.cab_filters2 == b.cab_filters2 && a.cab_kernel == b.cab_kernel &&
           a.attention_heads == b.attention_heads && a.attention_ff_dim == b.attention_ff_dim &&
           a.mkb_kernels == b.mkb_kernels && a.mkb_filters == b.mkb_filters &&
           a.mkb_ff_dim == b.mkb_ff_dim && a.num_classes == b.num_classes &&
           a.dropout == b.dropout && a.pad_id == b.pad_id;
}

} // namespace

void save_checkpoint(const model::CmaeModel<float>& m, const std::string& path,
                     const std::map<std::string, std::string>& manifest) {
    std::ostringstream head;
    head << kVersionLine << '\n';
    head << "[config]\n";
    head << "vocab_size = " << m.config.vocab_size << '\n';
    head << "embedding_dim = " << m.config.embedding_dim << '\n';
    head << "freeze_embeddings = " << (m.config.freeze_embeddings ? 1 : 0) << '\n';
    head << "cab_filters1 = " << m.config.cab_filters1 << '\n';
    head << "cab_filters2 = " << m.config.cab_filters2 << '\n';
    head << "cab_kernel = " << m.config.cab_kernel << '\n';
    head << "attention_heads = " << m.config.attention_heads << '\n';
    head << "attention_ff_dim = " << m.config.attention_ff_dim << '\n';
    head << "mkb_kernels = " << kernels_csv(m.config.mkb_kernels) << '\n';
    head << "mkb_filters = " << m.config.mkb_filters << '\n';
    head << "mkb_ff_dim = " << m.config.mkb_ff_dim << '\n';
    head << "num_classes = " << m.config.num_classes << '\n';
    head << "dropout = " << num(m.config.dropout) << '\n';
    head << "pad_id = " << m.config.pad_id << '\n';
    head << "[manifest]\n";
    for (const auto& [key, value] : manifest) {
        if (key.find('=') != std::string::npos || key.find('\n') != std::string::npos ||
            value.find('\n') != std::string::npos)
            raise(ErrorCode::InputError, "manifest entries must be single-line and '='-free keys");
        head << key << " = " << value << '\n';
    }
    head << "[params]\n";
    for (const auto& p : m.params)
        head << p.name << ' ' << nn::shape_string(p.node->value.shape) << ' '
             << (p.trainable() ? "trainable" : "frozen") << '\n';
    head << "[blobs]\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    const std::string header = head.str();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<unsigned char> buf;
    for (const auto& p : m.params) {
        const auto& data = p.node->value.data;
        buf.resize(data.size() * 4);
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::uint32_t bits;
            static_assert(sizeof(bits) == sizeof(float));
            std::memcpy(&bits, &data[i], 4);
            buf[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
            buf[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
            buf[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
            buf[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    if (!out) raise(ErrorCode::IoError, "write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const std::string marker = "[blobs]\n";
    const std::size_t marker_at = bytes.find(marker);
    if (marker_at == std::string::npos) corrupt(path, "missing blob section");
    const std::string header = bytes.substr(0, marker_at);
    const std::size_t blob_begin = marker_at + marker.size();

    // header lines
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos <= header.size()) {
        const std::size_t nl = header.find('\n', pos);
        if (nl == std::string::npos) {
            if (pos < header.size()) lines.push_back(header.substr(pos));
            break;
        }
        lines.push_back(header.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (lines.empty() || trim(lines[0]) != kVersionLine)
        raise(ErrorCode::IncompatibleCheckpoint,
              path + ": expected version line '" + kVersionLine + "'");

    model::CmaeConfig config;
    std::map<std::string, std::string> manifest;
    std::vector<ParamRow> rows;
    std::string section;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string line = trim(lines[i]);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "config" && section != "manifest" && section != "params")
                corrupt(path, "unknown section [" + section + "]");
            continue;
        }
        if (section == "config" || section == "manifest") {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) corrupt(path, "expected key = value, got '" + line + "'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (section == "manifest") {
                manifest[key] = value;
                continue;
            }
            if (key == "vocab_size") config.vocab_size = parse_int(path, value);
            else if (key == "embedding_dim") config.embedding_dim = parse_int(path, value);
            else if (key == "freeze_embeddings") config.freeze_embeddings = parse_int(path, value) != 0;
            else if (key == "cab_filters1") config.cab_filters1 = parse_int(path, value);
            else if (key == "cab_filters2") config.cab_filters2 = parse_int(path, value);
            else if (key == "cab_kernel") config.cab_kernel = parse_int(path, value);
            else if (key == "attention_heads") config.attention_heads = parse_int(path, value);
            else if (key == "attention_ff_dim") config.attention_ff_dim = parse_int(path, value);
            else if (key == "mkb_kernels") {
                config.mkb_kernels.clear();
                std::stringstream parts(value);
                std::string part;
                while (std::getline(parts, part, ','))
                    config.mkb_kernels.push_back(parse_int(path, trim(part)));
            } else if (key == "mkb_filters") config.mkb_filters = parse_int(path, value);
            else if (key == "mkb_ff_dim") config.mkb_ff_dim = parse_int(path, value);
            else if (key == "num_classes") config.num_classes = parse_int(path, value);
            else if (key == "dropout") config.dropout = parse_double(path, value);
            else if (key == "pad_id") config.pad_id = static_cast<std::int32_t>(parse_int(path, value));
            else corrupt(path, "unknown config key '" + key + "'");
            continue;
        }
        if (section == "params") {
            std::istringstream fields(line);
            ParamRow row;
            std::string shape_text, flag;
            if (!(fields >> row.name >> shape_text >> flag))
                corrupt(path, "malformed parameter row '" + line + "'");
            std::string extra;
            if (fields >> extra) corrupt(path, "malformed parameter row '" + line + "'");
            if (shape_text.size() < 2 || shape_text.front() != '[' || shape_text.back() != ']')
                corrupt(path, "malformed shape '" + shape_text + "'");
            const std::string inner = shape_text.substr(1, shape_text.size() - 2);
            if (!inner.empty()) {
                std::stringstream parts(inner);
                std::string part;
                while (std::getline(parts, part, ','))
                    row.shape.push_back(parse_int(path, trim(part)));
            }
            if (flag == "trainable") row.trainable = true;
            else if (flag == "frozen") row.trainable = false;
            else corrupt(path, "unknown trainability flag '" + flag + "'");
            rows.push_back(std::move(row));
            continue;
        }
        corrupt(path, "content before any section header");
    }
    if (rows.empty()) corrupt(path, "no parameters listed");

    try {
        config.validate();
    } catch (const Error& e) {
        corrupt(path, std::string("invalid config: ") + e.what());
    }

    // rebuild the skeleton; blob bytes then overwrite every parameter.
    embed::EmbeddingMatrix table;
    table.vocab_size = config.vocab_size;
    table.dim = config.embedding_dim;
    table.weights.assign(
        static_cast<std::size_t>(config.vocab_size) * static_cast<std::size_t>(config.embedding_dim),
        0.0f);
    embed::EmbeddingMatrix t1 = table, t2 = table, t3 = table;
    auto row_for = [&](const char* name) -> const ParamRow* {
        for (const auto& r : rows)
            if (r.name == name) return &r;
        return nullptr;
    };
    if (const ParamRow* r = row_for("emb1.weight")) t1.frozen = !r->trainable;
    if (const ParamRow* r = row_for("emb2.weight")) t2.frozen = !r->trainable;
    if (const ParamRow* r = row_for("emb3.weight")) t3.frozen = !r->trainable;

    LoadedCheckpoint loaded{model::build_model<float>(config, t1, t2, t3, 0), std::move(manifest)};
    model::CmaeModel<float>& m = loaded.model;

    if (rows.size() != m.params.size())
        corrupt(path, "parameter table length " + std::to_string(rows.size()) +
                          " does not match config-derived model (" +
                          std::to_string(m.params.size()) + ")");
    std::int64_t total = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& expected = m.params[i];
        if (rows[i].name != expected.name)
            corrupt(path, "parameter " + std::to_string(i) + " is '" + rows[i].name +
                              "', expected '" + expected.name + "'");
        if (rows[i].shape != expected.node->value.shape)
            corrupt(path, "parameter " + rows[i].name + " has shape " +
                              nn::shape_string(rows[i].shape) + ", expected " +
                              nn::shape_string(expected.node->value.shape));
        if (rows[i].trainable != expected.trainable())
            corrupt(path, "parameter " + rows[i].name + " trainability flag mismatch");
        total += expected.node->value.numel();
    }

    const std::size_t blob_bytes = bytes.size() - blob_begin;
    if (blob_bytes != static_cast<std::size_t>(total) * 4)
        corrupt(path, "blob section holds " + std::to_string(blob_bytes) + " bytes, expected " +
                          std::to_string(total * 4));

    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + blob_begin;
    for (auto& param : m.params) {
        for (auto& v : param.node->value.data) {
            const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                                       (static_cast<std::uint32_t>(p[1]) << 8) |
                                       (static_cast<std::uint32_t>(p[2]) << 16) |
                                       (static_cast<std::uint32_t>(p[3]) << 24);
            std::memcpy(&v, &bits, 4);
            p += 4;
        }
    }
    return loaded;
}

LoadedCheckpoint load_checkpoint(const std::string& path, const model::CmaeConfig& expected) {
    LoadedCheckpoint loaded = load_checkpoint(path);
    if (!config_equal(loaded.model.config, expected))
        raise(ErrorCode::IncompatibleCheckpoint,
              path + ": stored config does not match the expected model shape");
    return loaded;
}

} // namespace cmae::checkpoint
