#pragma once

// flat INI-style run configuration: `section.key = value` lines (a bare
// `[section]` header scopes following bare keys), environment overrides via
// the CMAE_ prefix, and programmatic overrides for CLI flags. precedence:
// file < environment < flags. unknown keys are rejected.

#include <cstdint>
#include <string>
#include <vector>

#include "cmae/model.hpp"
#include "cmae/train.hpp"

namespace cmae::config {

struct TokenizeConfig {
    std::string scheme = "hex2int"; // hex2int | word2vec | hex2tok | subword
    std::int64_t max_len = 1500;    // 0 = longest sequence in the batch
    std::string map_file;           // word2vec / hex2tok byte->id map
    std::string vocab_file;         // subword vocabulary
};

struct EmbedConfig {
    std::string source = "xavier"; // xavier | external
    std::string file;              // EMB1 file when source = external
    bool frozen = false;
};

struct DataConfig {
    std::string train_file;
    std::string val_file;
    std::string format = "csv"; // csv | jsonl
};

struct OutputConfig {
    std::string dir = ".";
    std::string model_name = "cmae"; // report label only
};

struct RunConfig {
    model::CmaeConfig model;
    train::TrainConfig train;
    TokenizeConfig tokenize;
    EmbedConfig embed;
    DataConfig data;
    OutputConfig output;
};

// set one `section.key` to a textual value; BadConfig on unknown key or
// unparsable value.
void apply_kv(RunConfig& config, const std::string& key, const std::string& value);

// parse an INI document into `config` (file precedence layer).
void apply_ini_text(RunConfig& config, const std::string& text);
void apply_ini_file(RunConfig& config, const std::string& path);

// CMAE_SECTION_KEY environment variables, checked for every registered key.
void apply_env_overrides(RunConfig& config);

// `key=value` pairs from the command line (highest precedence).
void apply_flag_overrides(RunConfig& config, const std::vector<std::string>& pairs);

// every registered key, section-qualified, in emission order.
const std::vector<std::string>& config_keys();

// resolved (key, value) pairs in emission order, e.g. for run manifests.
std::vector<std::pair<std::string, std::string>> config_pairs(const RunConfig& config);

// fully resolved config as INI text (round-trips through apply_ini_text).
std::string serialize(const RunConfig& config);

} // namespace cmae::config
