#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmae/errors.hpp"

namespace cmae::data {

// the seven traffic classes; codes are stable and Benign must be 0 because
// the security counts (wrongly detected / missed attacks) treat codes 1..6
// as the attack set.
enum class ClassLabel : int {
    Benign = 0,
    DoS = 1,
    DDoS = 2,
    PortScan = 3,
    BruteForce = 4,
    Bot = 5,
    Web = 6,
};

inline constexpr int kNumClasses = 7;

const char* class_name(ClassLabel label);
// case-insensitive, ignores spaces/underscores ("Port Scan" == "port_scan").
ClassLabel parse_label(const std::string& text);

struct PayloadRecord {
    std::vector<std::uint8_t> payload;
    ClassLabel label = ClassLabel::Benign;
    std::string source_id;
};

// PCAP extraction yields payloads without labels; callers label them later.
struct UnlabeledRecord {
    std::vector<std::uint8_t> payload;
    std::int64_t packet_index = 0;
    std::string five_tuple;
};

std::vector<std::uint8_t> parse_hex_payload(const std::string& hex);
std::string bytes_to_hex(const std::vector<std::uint8_t>& bytes);

enum class DatasetFormat { Csv, Jsonl };

// csv: header `hex_payload,label`; jsonl: {"hex_payload": ..., "label": ...}.
std::vector<PayloadRecord> load_dataset(const std::string& path, DatasetFormat format);
void save_dataset_csv(const std::string& path, const std::vector<PayloadRecord>& records);

struct DatasetSplit {
    std::vector<PayloadRecord> train;
    std::vector<PayloadRecord> validation;
    std::vector<PayloadRecord> test;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{0.64, 0.16, 0.20};
};

// per-class shuffle + two chained splits (all -> trainval/test, then
// trainval -> train/val); counts use round-half-up per class, which
// reproduces the reference corpus totals exactly.
DatasetSplit stratified_split(const std::vector<PayloadRecord>& records,
                              std::array<double, 3> ratios,
                              std::uint64_t seed);

struct SyntheticSpec {
    std::map<ClassLabel, std::int64_t> counts;
    // signature motif per class, 4..16 bytes; Benign may have none.
    std::map<ClassLabel, std::vector<std::uint8_t>> motifs;
    std::int64_t min_len = 64;
    std::int64_t max_len = 256;
    std::int64_t insertions = 1; // motif occurrences per payload
};

// uniform-noise payloads with class motifs planted at random offsets; class c
// payloads always contain c's motif and never another class's motif.
std::vector<PayloadRecord> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// convenience used by tests and the CLI: the reference class distribution
// scaled down by `scale` (counts = round(total_c * scale)).
SyntheticSpec default_synthetic_spec(double scale, std::int64_t min_len, std::int64_t max_len);

// spec file: INI sections [counts] (label = integer), [motifs] (label = hex
// bytes), [payload] (min_len / max_len / insertions).
SyntheticSpec load_synthetic_spec(const std::string& path);
void save_synthetic_spec(const std::string& path, const SyntheticSpec& spec);

} // namespace cmae::data
