#include "cmae/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "cmae/rng.hpp"

namespace cmae::data {

namespace {

const std::array<const char*, kNumClasses> kClassNames = {
    "Benign", "DoS", "DDoS", "PortScan", "BruteForce", "Bot", "Web"};

std::string normalize_label(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        if (c == ' ' || c == '_' || c == '-' || c == '\t' || c == '\r') continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    for (auto& l : lines)
        if (!l.empty() && l.back() == '\r') l.pop_back();
    return lines;
}

bool contains(const std::vector<std::uint8_t>& haystack, const std::vector<std::uint8_t>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
           haystack.end();
}

} // namespace

const char* class_name(ClassLabel label) {
    return kClassNames[static_cast<std::size_t>(label)];
}

ClassLabel parse_label(const std::string& text) {
    const std::string norm = normalize_label(text);
    for (int i = 0; i < kNumClasses; ++i)
        if (norm == normalize_label(kClassNames[static_cast<std::size_t>(i)]))
            return static_cast<ClassLabel>(i);
    raise(ErrorCode::UnknownLabel, "unknown class label '" + text + "'");
}

std::vector<std::uint8_t> parse_hex_payload(const std::string& hex) {
    if (hex.size() % 2 != 0)
        raise(ErrorCode::InvalidHexLength,
              "hex payload has odd length " + std::to_string(hex.size()));
    std::vector<std::uint8_t> bytes(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        const int hi = hex_digit(hex[i]);
        const int lo = hex_digit(hex[i + 1]);
        if (hi < 0)
            raise(ErrorCode::InvalidHexDigit,
                  std::string("invalid hex character '") + hex[i] + "' at offset " +
                      std::to_string(i));
        if (lo < 0)
            raise(ErrorCode::InvalidHexDigit,
                  std::string("invalid hex character '") + hex[i + 1] + "' at offset " +
                      std::to_string(i + 1));
        bytes[i / 2] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return bytes;
}

std::string bytes_to_hex(const std::vector<std::uint8_t>& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

std::vector<PayloadRecord> load_dataset(const std::string& path, DatasetFormat format) {
    const std::vector<std::string> lines = split_lines(read_file(path));
    std::vector<PayloadRecord> records;

    if (format == DatasetFormat::Csv) {
        if (lines.empty() || trim(lines[0]) != "hex_payload,label")
            raise(ErrorCode::ParseError, path + ": expected header 'hex_payload,label'");
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const std::string& line = lines[i];
            if (trim(line).empty()) continue;
            const std::size_t comma = line.find(',');
            if (comma == std::string::npos)
                raise(ErrorCode::ParseError,
                      path + " line " + std::to_string(i + 1) + ": missing ',' separator");
            try {
                PayloadRecord rec;
                rec.payload = parse_hex_payload(trim(line.substr(0, comma)));
                rec.label = parse_label(trim(line.substr(comma + 1)));
                rec.source_id = std::to_string(i + 1);
                records.push_back(std::move(rec));
            } catch (const Error& e) {
                raise(e.code(), path + " line " + std::to_string(i + 1) + ": " + e.what());
            }
        }
        return records;
    }

    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(lines[i]);
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::ParseError,
                  path + " line " + std::to_string(i + 1) + ": " + e.what());
        }
        if (!obj.is_object() || !obj.contains("hex_payload") || !obj.contains("label") ||
            !obj["hex_payload"].is_string() || !obj["label"].is_string())
            raise(ErrorCode::ParseError, path + " line " + std::to_string(i + 1) +
                                             ": expected string fields hex_payload and label");
        try {
            PayloadRecord rec;
            rec.payload = parse_hex_payload(obj["hex_payload"].get<std::string>());
            rec.label = parse_label(obj["label"].get<std::string>());
            rec.source_id = obj.contains("source_id") && obj["source_id"].is_string()
                                ? obj["source_id"].get<std::string>()
                                : std::to_string(i + 1);
            records.push_back(std::move(rec));
        } catch (const Error& e) {
            raise(e.code(), path + " line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return records;
}

void save_dataset_csv(const std::string& path, const std::vector<PayloadRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out << "hex_payload,label\n";
    for (const auto& rec : records)
        out << bytes_to_hex(rec.payload) << ',' << class_name(rec.label) << '\n';
    if (!out) raise(ErrorCode::IoError, "failed writing " + path);
}

DatasetSplit stratified_split(const std::vector<PayloadRecord>& records,
                              std::array<double, 3> ratios, std::uint64_t seed) {
    double sum = 0;
    for (double r : ratios) {
        if (r <= 0) raise(ErrorCode::InvalidRatio, "split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        raise(ErrorCode::InvalidRatio, "split ratios must sum to 1");

    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < records.size(); ++i)
        by_class[static_cast<std::size_t>(records[i].label)].push_back(i);

    for (int c = 0; c < kNumClasses; ++c) {
        const auto n = by_class[static_cast<std::size_t>(c)].size();
        if (n > 0 && n < 3)
            raise(ErrorCode::InsufficientClassSamples,
                  std::string("class ") + kClassNames[static_cast<std::size_t>(c)] + " has only " +
                      std::to_string(n) + " samples (need at least 3)");
    }

    // two chained splits: all -> (train+val)/test, then (train+val) -> train/val
    const double first_frac = 1.0 - ratios[2];
    const double second_frac = ratios[0] / (ratios[0] + ratios[1]);

    DatasetSplit split;
    split.seed = seed;
    split.ratios = ratios;
    std::mt19937_64 gen(seed);
    for (int c = 0; c < kNumClasses; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        if (idx.empty()) continue;
        rng::shuffle(idx, gen);
        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        const std::int64_t m = std::llround(first_frac * static_cast<double>(n));
        const std::int64_t t = std::llround(second_frac * static_cast<double>(m));
        for (std::int64_t i = 0; i < n; ++i) {
            const PayloadRecord& rec = records[idx[static_cast<std::size_t>(i)]];
            if (i < t)
                split.train.push_back(rec);
            else if (i < m)
                split.validation.push_back(rec);
            else
                split.test.push_back(rec);
        }
    }
    return split;
}

namespace {

void validate_spec(const SyntheticSpec& spec) {
    if (spec.min_len < 1 || spec.max_len < spec.min_len)
        raise(ErrorCode::InvalidSpec, "payload length range must satisfy 1 <= min <= max");
    if (spec.insertions < 1) raise(ErrorCode::InvalidSpec, "insertions must be >= 1");
    for (const auto& [label, count] : spec.counts) {
        if (count < 0) raise(ErrorCode::InvalidSpec, "negative count for class");
        if (count > 0 && label != ClassLabel::Benign && !spec.motifs.count(label))
            raise(ErrorCode::InvalidSpec,
                  std::string("attack class ") + class_name(label) + " has no motif");
    }
    for (const auto& [label, motif] : spec.motifs) {
        if (motif.size() < 4 || motif.size() > 16)
            raise(ErrorCode::InvalidSpec,
                  std::string("motif for ") + class_name(label) + " must be 4..16 bytes");
        if (static_cast<std::int64_t>(motif.size()) * spec.insertions > spec.min_len)
            raise(ErrorCode::InvalidSpec,
                  std::string("motif for ") + class_name(label) +
                      " cannot fit in the minimum payload length");
        for (const auto& [other, other_motif] : spec.motifs)
            if (label != other && contains(other_motif, motif))
                raise(ErrorCode::InvalidSpec,
                      std::string("motif for ") + class_name(label) + " is a substring of " +
                          class_name(other) + "'s motif");
    }
}

} // namespace

std::vector<PayloadRecord> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    std::mt19937_64 gen(seed);
    std::vector<PayloadRecord> records;
    std::int64_t serial = 0;

    for (int c = 0; c < kNumClasses; ++c) {
        const ClassLabel label = static_cast<ClassLabel>(c);
        const auto count_it = spec.counts.find(label);
        if (count_it == spec.counts.end() || count_it->second == 0) continue;
        const auto motif_it = spec.motifs.find(label);
        const std::vector<std::uint8_t>* motif =
            motif_it == spec.motifs.end() ? nullptr : &motif_it->second;

        for (std::int64_t i = 0; i < count_it->second; ++i) {
            PayloadRecord rec;
            rec.label = label;
            rec.source_id = "gen-" + std::to_string(++serial);
            for (int attempt = 0;; ++attempt) {
                if (attempt > 1000)
                    raise(ErrorCode::InvalidSpec, "cannot place motifs without collisions");
                const std::int64_t len =
                    spec.min_len +
                    static_cast<std::int64_t>(rng::bounded(
                        gen, static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1)));
                rec.payload.resize(static_cast<std::size_t>(len));
                for (auto& b : rec.payload)
                    b = static_cast<std::uint8_t>(rng::bounded(gen, 256));

                if (motif) {
                    // plant `insertions` non-overlapping copies at random offsets
                    std::vector<std::pair<std::int64_t, std::int64_t>> placed;
                    bool ok = true;
                    for (std::int64_t m = 0; m < spec.insertions && ok; ++m) {
                        bool found = false;
                        for (int tries = 0; tries < 200; ++tries) {
                            const std::int64_t off = static_cast<std::int64_t>(rng::bounded(
                                gen, static_cast<std::uint64_t>(
                                         len - static_cast<std::int64_t>(motif->size()) + 1)));
                            const std::int64_t end =
                                off + static_cast<std::int64_t>(motif->size());
                            bool overlap = false;
                            for (const auto& [b, e] : placed)
                                if (off < e && b < end) overlap = true;
                            if (overlap) continue;
                            std::copy(motif->begin(), motif->end(),
                                      rec.payload.begin() + off);
                            placed.emplace_back(off, end);
                            found = true;
                            break;
                        }
                        ok = found;
                    }
                    if (!ok) continue; // fresh payload, new offsets
                }

                // class purity: no other class's motif may appear anywhere
                bool tainted = false;
                for (const auto& [other, other_motif] : spec.motifs)
                    if (other != label && contains(rec.payload, other_motif)) tainted = true;
                if (!tainted) break;
            }
            records.push_back(std::move(rec));
        }
    }
    return records;
}

SyntheticSpec default_synthetic_spec(double scale, std::int64_t min_len, std::int64_t max_len) {
    if (scale <= 0) raise(ErrorCode::InvalidSpec, "scale must be positive");
    // reference per-class totals of the 1,027,644-packet corpus
    static const std::array<std::int64_t, kNumClasses> kTotals = {
        528265, 250706, 124111, 107778, 13231, 1905, 1648};

    SyntheticSpec spec;
    spec.min_len = min_len;
    spec.max_len = max_len;
    spec.insertions = 1;
    for (int c = 0; c < kNumClasses; ++c)
        spec.counts[static_cast<ClassLabel>(c)] =
            std::llround(static_cast<double>(kTotals[static_cast<std::size_t>(c)]) * scale);

    auto motif = [](const char* text) {
        return std::vector<std::uint8_t>(text, text + std::char_traits<char>::length(text));
    };
    spec.motifs[ClassLabel::DoS] = motif("SLOWLORIS");
    spec.motifs[ClassLabel::DDoS] = {0xDE, 0xAD, 0xBE, 0xEF, 0x55, 0xAA};
    spec.motifs[ClassLabel::PortScan] = motif("SYN-SCAN");
    spec.motifs[ClassLabel::BruteForce] = motif("PASSWD!!");
    spec.motifs[ClassLabel::Bot] = motif("BOTNET-C2");
    spec.motifs[ClassLabel::Web] = motif("<script>");
    return spec;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
    SyntheticSpec spec;
    spec.counts.clear();
    spec.motifs.clear();
    const std::vector<std::string> lines = split_lines(read_file(path));
    std::string section;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string line = trim(lines[i]);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            if (section != "counts" && section != "motifs" && section != "payload")
                raise(ErrorCode::InvalidSpec,
                      path + " line " + std::to_string(i + 1) + ": unknown section [" + section +
                          "]");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            raise(ErrorCode::InvalidSpec,
                  path + " line " + std::to_string(i + 1) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (section == "counts") {
                spec.counts[parse_label(key)] = std::stoll(value);
            } else if (section == "motifs") {
                spec.motifs[parse_label(key)] = parse_hex_payload(value);
            } else if (section == "payload") {
                if (key == "min_len")
                    spec.min_len = std::stoll(value);
                else if (key == "max_len")
                    spec.max_len = std::stoll(value);
                else if (key == "insertions")
                    spec.insertions = std::stoll(value);
                else
                    raise(ErrorCode::InvalidSpec, "unknown payload key '" + key + "'");
            } else {
                raise(ErrorCode::InvalidSpec, "key outside a section");
            }
        } catch (const Error& e) {
            raise(e.code(), path + " line " + std::to_string(i + 1) + ": " + e.what());
        } catch (const std::exception&) {
            raise(ErrorCode::InvalidSpec,
                  path + " line " + std::to_string(i + 1) + ": invalid number '" + value + "'");
        }
    }
    return spec;
}

void save_synthetic_spec(const std::string& path, const SyntheticSpec& spec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out << "[counts]\n";
    for (const auto& [label, count] : spec.counts)
        out << class_name(label) << " = " << count << '\n';
    out << "\n[motifs]\n";
    for (const auto& [label, motif] : spec.motifs)
        out << class_name(label) << " = " << bytes_to_hex(motif) << '\n';
    out << "\n[payload]\n";
    out << "min_len = " << spec.min_len << '\n';
    out << "max_len = " << spec.max_len << '\n';
    out << "insertions = " << spec.insertions << '\n';
    if (!out) raise(ErrorCode::IoError, "failed writing " + path);
}

} // namespace cmae::data
