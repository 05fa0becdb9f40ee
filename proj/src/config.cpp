#include "cmae/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace cmae::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string num(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

[[noreturn]] void bad(const std::string& key, const std::string& why) {
    raise(ErrorCode::BadConfig, key + ": " + why);
}

std::int64_t to_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) bad(key, "expected an integer, got '" + value + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        bad(key, "expected an integer, got '" + value + "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad(key, "expected a number, got '" + value + "'");
        return v;
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        bad(key, "expected a number, got '" + value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad(key, "expected a boolean, got '" + value + "'");
}

std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& value) {
    std::vector<std::int64_t> out;
    std::stringstream parts(value);
    std::string part;
    while (std::getline(parts, part, ',')) out.push_back(to_int(key, trim(part)));
    if (out.empty()) bad(key, "expected a comma-separated integer list");
    return out;
}

std::string from_int_list(const std::vector<std::int64_t>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(values[i]);
    }
    return s;
}

struct KeyEntry {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

using Registry = std::vector<std::pair<std::string, KeyEntry>>;

const Registry& registry() {
    static const Registry table = [] {
        Registry r;
        auto reg = [&r](const std::string& key, auto setter, auto getter) {
            r.push_back({key, {std::move(setter), std::move(getter)}});
        };

        // model.*
        reg("model.vocab_size",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.vocab_size = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.vocab_size); });
        reg("model.embedding_dim",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.embedding_dim = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.embedding_dim); });
        reg("model.freeze_embeddings",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.freeze_embeddings = to_bool(k, v); },
            [](const RunConfig& c) { return c.model.freeze_embeddings ? "true" : "false"; });
        reg("model.cab_filters1",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.cab_filters1 = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.cab_filters1); });
        reg("model.cab_filters2",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.cab_filters2 = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.cab_filters2); });
        reg("model.cab_kernel",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.cab_kernel = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.cab_kernel); });
        reg("model.attention_heads",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.attention_heads = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.attention_heads); });
        reg("model.attention_ff_dim",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.attention_ff_dim = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.attention_ff_dim); });
        reg("model.mkb_kernels",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mkb_kernels = to_int_list(k, v); },
            [](const RunConfig& c) { return from_int_list(c.model.mkb_kernels); });
        reg("model.mkb_filters",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mkb_filters = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.mkb_filters); });
        reg("model.mkb_ff_dim",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mkb_ff_dim = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.mkb_ff_dim); });
        reg("model.num_classes",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_classes = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.model.num_classes); });
        reg("model.dropout",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dropout = to_double(k, v); },
            [](const RunConfig& c) { return num(c.model.dropout); });
        reg("model.pad_id",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.pad_id = static_cast<std::int32_t>(to_int(k, v)); },
            [](const RunConfig& c) { return std::to_string(c.model.pad_id); });

        // train.*
        reg("train.epochs",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.epochs); });
        reg("train.batch_size",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
        reg("train.infer_batch_size",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.infer_batch_size = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.infer_batch_size); });
        reg("train.lr",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.lr); });
        reg("train.eps",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.eps = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.eps); });
        reg("train.weight_decay",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.weight_decay); });
        reg("train.beta1",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta1 = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.beta1); });
        reg("train.beta2",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta2 = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.beta2); });
        reg("train.scheduler_factor",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.scheduler_factor = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.scheduler_factor); });
        reg("train.scheduler_patience",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.scheduler_patience = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.scheduler_patience); });
        reg("train.min_lr",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.min_lr = to_double(k, v); },
            [](const RunConfig& c) { return num(c.train.min_lr); });
        reg("train.early_stop_patience",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.early_stop_patience = to_int(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.early_stop_patience); });
        reg("train.monitor",
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v == "loss") c.train.monitor = train::Monitor::ValidationLoss;
                else if (v == "accuracy") c.train.monitor = train::Monitor::ValidationAccuracy;
                else bad(k, "expected loss|accuracy, got '" + v + "'");
            },
            [](const RunConfig& c) {
                return c.train.monitor == train::Monitor::ValidationAccuracy ? "accuracy" : "loss";
            });
        reg("train.seed",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = static_cast<std::uint64_t>(to_int(k, v)); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); });

        // tokenize.*
        reg("tokenize.scheme",
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v != "hex2int" && v != "word2vec" && v != "hex2tok" && v != "subword")
                    bad(k, "expected hex2int|word2vec|hex2tok|subword, got '" + v + "'");
                c.tokenize.scheme = v;
            },
            [](const RunConfig& c) { return c.tokenize.scheme; });
        reg("tokenize.max_len",
            [](RunConfig& c, const std::string& k, const std::string& v) {
                const std::int64_t n = to_int(k, v);
                if (n < 0) bad(k, "max_len must be 0 (batch max) or positive");
                c.tokenize.max_len = n;
            },
            [](const RunConfig& c) { return std::to_string(c.tokenize.max_len); });
        reg("tokenize.map_file",
            [](RunConfig& c, const std::string&, const std::string& v) { c.tokenize.map_file = v; },
            [](const RunConfig& c) { return c.tokenize.map_file; });
        reg("tokenize.vocab_file",
            [](RunConfig& c, const std::string&, const std::string& v) { c.tokenize.vocab_file = v; },
            [](const RunConfig& c) { return c.tokenize.vocab_file; });

        // embed.*
        reg("embed.source",
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v != "xavier" && v != "external")
                    bad(k, "expected xavier|external, got '" + v + "'");
                c.embed.source = v;
            },
            [](const RunConfig& c) { return c.embed.source; });
        reg("embed.file",
            [](RunConfig& c, const std::string&, const std::string& v) { c.embed.file = v; },
            [](const RunConfig& c) { return c.embed.file; });
        reg("embed.frozen",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.embed.frozen = to_bool(k, v); },
            [](const RunConfig& c) { return c.embed.frozen ? "true" : "false"; });

        // data.*
        reg("data.train_file",
            [](RunConfig& c, const std::string&, const std::string& v) { c.data.train_file = v; },
            [](const RunConfig& c) { return c.data.train_file; });
        reg("data.val_file",
            [](RunConfig& c, const std::string&, const std::string& v) { c.data.val_file = v; },
            [](const RunConfig& c) { return c.data.val_file; });
        reg("data.format",
            [](RunConfig& c, const std::string& k, const std::string& v) {
                if (v != "csv" && v != "jsonl") bad(k, "expected csv|jsonl, got '" + v + "'");
                c.data.format = v;
            },
            [](const RunConfig& c) { return c.data.format; });

        // output.*
        reg("output.dir",
            [](RunConfig& c, const std::string&, const std::string& v) { c.output.dir = v; },
            [](const RunConfig& c) { return c.output.dir; });
        reg("output.model_name",
            [](RunConfig& c, const std::string&, const std::string& v) { c.output.model_name = v; },
            [](const RunConfig& c) { return c.output.model_name; });
        return r;
    }();
    return table;
}

const KeyEntry* find_key(const std::string& key) {
    for (const auto& [name, entry] : registry())
        if (name == key) return &entry;
    return nullptr;
}

} // namespace

void apply_kv(RunConfig& config, const std::string& key, const std::string& value) {
    const KeyEntry* entry = find_key(key);
    if (!entry) raise(ErrorCode::BadConfig, "unknown config key '" + key + "'");
    entry->set(config, key, value);
}

void apply_ini_text(RunConfig& config, const std::string& text) {
    std::istringstream in(text);
    std::string raw, section;
    std::int64_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                raise(ErrorCode::BadConfig,
                      "line " + std::to_string(line_no) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                raise(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": empty section");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            raise(ErrorCode::BadConfig,
                  "line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            raise(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": empty key");
        if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
        try {
            apply_kv(config, key, value);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::BadConfig) throw;
            std::string message = e.what();
            const std::string prefix = std::string(error_code_name(e.code())) + ": ";
            if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
            raise(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": " + message);
        }
    }
}

void apply_ini_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        apply_ini_text(config, text);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::BadConfig) throw;
        std::string message = e.what();
        const std::string prefix = std::string(error_code_name(e.code())) + ": ";
        if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
        raise(ErrorCode::BadConfig, path + " " + message);
    }
}

void apply_env_overrides(RunConfig& config) {
    for (const auto& [key, entry] : registry()) {
        std::string env_name = "CMAE_";
        for (char ch : key)
            env_name += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (const char* value = std::getenv(env_name.c_str()))
            entry.set(config, key, value);
    }
}

void apply_flag_overrides(RunConfig& config, const std::vector<std::string>& pairs) {
    for (const std::string& pair : pairs) {
        const std::size_t eq = pair.find('=');
        if (eq == std::string::npos)
            raise(ErrorCode::BadConfig, "expected key=value, got '" + pair + "'");
        apply_kv(config, trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
    }
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [name, entry] : registry()) out.push_back(name);
        return out;
    }();
    return keys;
}

std::vector<std::pair<std::string, std::string>> config_pairs(const RunConfig& config) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, entry] : registry()) out.emplace_back(name, entry.get(config));
    return out;
}

std::string serialize(const RunConfig& config) {
    std::ostringstream out;
    std::string section;
    for (const auto& [name, entry] : registry()) {
        const std::size_t dot = name.find('.');
        const std::string this_section = name.substr(0, dot);
        if (this_section != section) {
            if (!section.empty()) out << '\n';
            out << '[' << this_section << "]\n";
            section = this_section;
        }
        out << name.substr(dot + 1) << " = " << entry.get(config) << '\n';
    }
    return out.str();
}

} // namespace cmae::config
