// cmae: payload-based network intrusion detection pipeline.
// subcommands cover the full workflow: synthetic data generation, stratified
// splitting, word2vec pre-training, model training, evaluation, prediction,
// parameter accounting, tokenizer inspection, and pcap payload extraction.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cmae/checkpoint.hpp"
#include "cmae/config.hpp"
#include "cmae/data.hpp"
#include "cmae/embed.hpp"
#include "cmae/metrics.hpp"
#include "cmae/pcap.hpp"
#include "cmae/pipeline.hpp"
#include "cmae/tokenize.hpp"
#include "cmae/train.hpp"

namespace {

using namespace cmae;

data::DatasetFormat parse_format(const std::string& name) {
    if (name == "csv") return data::DatasetFormat::Csv;
    if (name == "jsonl") return data::DatasetFormat::Jsonl;
    raise(ErrorCode::BadConfig, "expected format csv|jsonl, got '" + name + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot open " + path + " for writing");
    out << text;
    if (!out) raise(ErrorCode::IoError, "write failed for " + path);
}

config::RunConfig resolve_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
    config::RunConfig rc;
    if (!config_path.empty()) config::apply_ini_file(rc, config_path);
    config::apply_env_overrides(rc);
    config::apply_flag_overrides(rc, overrides);
    return rc;
}

// checkpoints carry the full resolved run config in their manifest; pull the
// recognized keys back out so eval/predict reuse the training-time tokenizer.
config::RunConfig config_from_manifest(const std::map<std::string, std::string>& manifest) {
    config::RunConfig rc;
    for (const std::string& key : config::config_keys()) {
        const auto it = manifest.find(key);
        if (it != manifest.end()) config::apply_kv(rc, key, it->second);
    }
    return rc;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::mt19937_64 mix(base ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
    return mix();
}

struct BuiltModel {
    pipeline::Tokenizer tokenizer;
    model::CmaeModel<float> net;
};

BuiltModel build_from_config(const config::RunConfig& rc) {
    BuiltModel b{pipeline::make_tokenizer(rc.tokenize), {}};
    if (b.tokenizer.vocab_size > rc.model.vocab_size)
        raise(ErrorCode::ConfigError,
              "tokenizer '" + b.tokenizer.name + "' needs " +
                  std::to_string(b.tokenizer.vocab_size) + " embedding rows but model.vocab_size is " +
                  std::to_string(rc.model.vocab_size));
    const auto tables = pipeline::resolve_embeddings(rc.embed, b.tokenizer, rc.model,
                                                     derive_seed(rc.train.seed, 0));
    b.net = model::build_model<float>(rc.model, tables[0], tables[1], tables[2],
                                      derive_seed(rc.train.seed, 1));
    return b;
}

void cmd_gen(const std::string& spec_path, double scale, std::int64_t min_len,
             std::int64_t max_len, std::uint64_t seed, const std::string& out) {
    const data::SyntheticSpec spec = spec_path.empty()
                                         ? data::default_synthetic_spec(scale, min_len, max_len)
                                         : data::load_synthetic_spec(spec_path);
    const auto records = data::generate_synthetic(spec, seed);
    data::save_dataset_csv(out, records);
    std::cout << "wrote " << records.size() << " records to " << out << "\n";
}

void cmd_split(const std::string& in, const std::string& format, std::uint64_t seed,
               const std::string& out_dir) {
    const auto records = data::load_dataset(in, parse_format(format));
    const data::DatasetSplit split = data::stratified_split(records, {0.64, 0.16, 0.20}, seed);
    std::filesystem::create_directories(out_dir);
    const std::string base = out_dir + "/";
    data::save_dataset_csv(base + "train.csv", split.train);
    data::save_dataset_csv(base + "val.csv", split.validation);
    data::save_dataset_csv(base + "test.csv", split.test);
    std::cout << "train " << split.train.size() << ", val " << split.validation.size()
              << ", test " << split.test.size() << " -> " << out_dir << "\n";
}

void cmd_w2v_train(const std::string& in, const std::string& format, std::int64_t dim,
                   std::int64_t window, std::int64_t min_count, std::int64_t negative,
                   std::int64_t epochs, double lr, std::uint64_t seed, const std::string& out) {
    const auto records = data::load_dataset(in, parse_format(format));
    std::vector<std::vector<std::uint8_t>> corpus;
    corpus.reserve(records.size());
    for (const auto& r : records) corpus.push_back(r.payload);
    embed::Word2VecParams params;
    params.dim = dim;
    params.window = window;
    params.min_count = min_count;
    params.negative_samples = negative;
    params.epochs = epochs;
    params.learning_rate = lr;
    const embed::Word2VecResult result = embed::train_word2vec(corpus, params, seed);
    tokenize::save_token_map(out + ".map", result.map);
    embed::save_embeddings(out + ".emb", result.matrix);
    std::cout << "vocabulary " << result.vocabulary.size() << " bytes, matrix "
              << result.matrix.vocab_size << "x" << result.matrix.dim << " -> " << out
              << ".map / " << out << ".emb\n";
}

void cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    const config::RunConfig rc = resolve_config(config_path, overrides);
    rc.model.validate();
    rc.train.validate();
    if (rc.data.train_file.empty() || rc.data.val_file.empty())
        raise(ErrorCode::BadConfig, "data.train_file and data.val_file are required");

    std::filesystem::create_directories(rc.output.dir);
    write_text_file(rc.output.dir + "/config.resolved.ini", config::serialize(rc));

    const auto format = parse_format(rc.data.format);
    const auto train_set = data::load_dataset(rc.data.train_file, format);
    const auto val_set = data::load_dataset(rc.data.val_file, format);

    BuiltModel b = build_from_config(rc);
    const auto encoder = pipeline::make_batch_encoder(b.tokenizer, rc.tokenize.max_len);

    std::map<std::string, std::string> manifest;
    for (const auto& [key, value] : config::config_pairs(rc)) manifest[key] = value;

    const std::string checkpoint_path = rc.output.dir + "/" + rc.output.model_name + ".ckpt";
    const train::TrainResult result =
        train::train_loop(b.net, train_set, val_set, rc.train, encoder, checkpoint_path, manifest,
                          &std::cout);
    train::save_history_csv(rc.output.dir + "/" + rc.output.model_name + ".history.csv",
                            result.history);
    std::cout << "best epoch " << result.history.best_epoch
              << (result.history.stopped_early ? " (stopped early)" : "") << ", checkpoint "
              << checkpoint_path << "\n";
}

void cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
              const std::string& format, const std::vector<std::string>& overrides,
              const std::string& out_csv, std::int64_t batch) {
    checkpoint::LoadedCheckpoint loaded = checkpoint::load_checkpoint(checkpoint_path);
    config::RunConfig rc = config_from_manifest(loaded.manifest);
    config::apply_flag_overrides(rc, overrides);

    const auto records = data::load_dataset(data_path, parse_format(format));
    const pipeline::Tokenizer tokenizer = pipeline::make_tokenizer(rc.tokenize);
    const pipeline::InferenceResult inference =
        pipeline::run_inference(loaded.model, records, tokenizer, rc.tokenize.max_len, batch);

    std::vector<int> predicted, actual;
    predicted.reserve(inference.rows.size());
    actual.reserve(inference.rows.size());
    for (const auto& row : inference.rows) {
        predicted.push_back(row.predicted);
        actual.push_back(row.actual);
    }
    eval::MacroReport report = eval::macro_metrics(eval::confusion(predicted, actual));
    report.length = rc.tokenize.max_len == 0 ? "batch" : std::to_string(rc.tokenize.max_len);
    report.model = rc.output.model_name;
    report.tokenizer = tokenizer.name;
    report.predict_per_sec = inference.predictions_per_second;

    std::cout << eval::emit_report(report, eval::ReportFormat::Text);
    if (!out_csv.empty())
        write_text_file(out_csv, eval::emit_report(report, eval::ReportFormat::Csv));
}

void cmd_predict(const std::string& checkpoint_path, const std::string& in,
                 const std::string& format, std::int64_t batch, const std::string& out,
                 const std::vector<std::string>& overrides) {
    checkpoint::LoadedCheckpoint loaded = checkpoint::load_checkpoint(checkpoint_path);
    config::RunConfig rc = config_from_manifest(loaded.manifest);
    config::apply_flag_overrides(rc, overrides);

    std::vector<data::PayloadRecord> records;
    bool labeled = true;
    if (format == "pcap") {
        labeled = false;
        const data::PcapExtraction extraction = data::extract_pcap_payloads(in);
        records.reserve(extraction.records.size());
        for (const auto& u : extraction.records) {
            data::PayloadRecord r;
            r.payload = u.payload;
            r.source_id = "pkt-" + std::to_string(u.packet_index) + " " + u.five_tuple;
            records.push_back(std::move(r));
        }
    } else {
        records = data::load_dataset(in, parse_format(format));
    }

    const pipeline::Tokenizer tokenizer = pipeline::make_tokenizer(rc.tokenize);
    pipeline::InferenceResult inference =
        pipeline::run_inference(loaded.model, records, tokenizer, rc.tokenize.max_len, batch);
    if (!labeled)
        for (auto& row : inference.rows) row.actual = -1;

    write_text_file(out, eval::format_predictions(inference.rows));
    std::cout << "predictions/second: " << inference.predictions_per_second << "\n";
    std::cout << "wrote " << inference.rows.size() << " predictions to " << out << "\n";
}

void cmd_params(const std::string& config_path, const std::vector<std::string>& overrides) {
    const config::RunConfig rc = resolve_config(config_path, overrides);
    rc.model.validate();

    // pure arithmetic: zero tables of the configured shape stand in for the
    // real embedding source so no external file is needed.
    embed::EmbeddingMatrix table;
    table.vocab_size = rc.model.vocab_size;
    table.dim = rc.model.embedding_dim;
    table.weights.assign(static_cast<std::size_t>(table.vocab_size) *
                             static_cast<std::size_t>(table.dim),
                         0.0f);
    table.frozen = rc.embed.frozen;
    const auto net = model::build_model<float>(rc.model, table, table, table, 0);
    const model::ParameterCount count = net.count_parameters();

    std::size_t name_width = 9;
    for (const auto& [name, n] : count.per_param) name_width = std::max(name_width, name.size());
    for (const auto& [name, n] : count.per_param)
        std::cout << std::left << std::setw(static_cast<int>(name_width)) << name << "  " << n
                  << "\n";
    std::cout << std::left << std::setw(static_cast<int>(name_width)) << "trainable" << "  "
              << count.trainable << "\n";
    std::cout << std::left << std::setw(static_cast<int>(name_width)) << "frozen" << "  "
              << count.frozen << "\n";
    std::cout << std::left << std::setw(static_cast<int>(name_width)) << "total" << "  "
              << count.total << "\n";
}

void cmd_tokenize(const std::string& scheme, const std::string& hex, const std::string& map_file,
                  const std::string& vocab_file, std::int64_t max_len) {
    config::TokenizeConfig cfg;
    cfg.scheme = scheme;
    cfg.max_len = max_len;
    cfg.map_file = map_file;
    cfg.vocab_file = vocab_file;
    const pipeline::Tokenizer tokenizer = pipeline::make_tokenizer(cfg);
    const auto payload = data::parse_hex_payload(hex);
    const tokenize::TokenSequence seq = tokenizer.encode_display(payload, max_len);
    std::cout << "[";
    for (std::size_t i = 0; i < seq.ids.size(); ++i)
        std::cout << (i ? ", " : "") << seq.ids[i];
    std::cout << "]\n";
}

void cmd_pcap_extract(const std::string& pcap_path, const std::string& out) {
    const data::PcapExtraction extraction = data::extract_pcap_payloads(pcap_path);
    std::ostringstream csv;
    csv << "hex_payload,packet_index,five_tuple\n";
    for (const auto& r : extraction.records)
        csv << data::bytes_to_hex(r.payload) << ',' << r.packet_index << ',' << r.five_tuple
            << '\n';
    write_text_file(out, csv.str());
    std::cout << "extracted " << extraction.records.size() << " payloads, skipped "
              << extraction.skipped << " packets\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"payload-based network intrusion detection pipeline"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic labeled dataset");
    std::string gen_spec, gen_out = "synthetic.csv";
    double gen_scale = 1.0 / 73.0;
    std::int64_t gen_min_len = 64, gen_max_len = 256;
    std::uint64_t gen_seed = 1;
    gen->add_option("--spec", gen_spec, "spec file ([counts]/[motifs]/[payload] sections)");
    gen->add_option("--scale", gen_scale, "class-count scale of the reference distribution")
        ->capture_default_str();
    gen->add_option("--min-len", gen_min_len, "minimum payload bytes")->capture_default_str();
    gen->add_option("--max-len", gen_max_len, "maximum payload bytes")->capture_default_str();
    gen->add_option("--seed", gen_seed, "rng seed")->capture_default_str();
    gen->add_option("--out", gen_out, "output CSV")->capture_default_str();
    gen->callback([&] { cmd_gen(gen_spec, gen_scale, gen_min_len, gen_max_len, gen_seed, gen_out); });

    // split
    auto* split = app.add_subcommand("split", "stratified 0.64/0.16/0.20 train/val/test split");
    std::string split_in, split_format = "csv", split_out_dir = ".";
    std::uint64_t split_seed = 1;
    split->add_option("--in", split_in, "input dataset")->required();
    split->add_option("--format", split_format, "csv|jsonl")->capture_default_str();
    split->add_option("--seed", split_seed, "shuffle seed")->capture_default_str();
    split->add_option("--out-dir", split_out_dir, "directory for train/val/test CSVs")
        ->capture_default_str();
    split->callback([&] { cmd_split(split_in, split_format, split_seed, split_out_dir); });

    // w2v-train
    auto* w2v = app.add_subcommand("w2v-train", "train skip-gram byte embeddings");
    std::string w2v_in, w2v_format = "csv", w2v_out = "w2v";
    std::int64_t w2v_dim = 64, w2v_window = 5, w2v_min_count = 5, w2v_negative = 5, w2v_epochs = 5;
    double w2v_lr = 0.025;
    std::uint64_t w2v_seed = 1;
    w2v->add_option("--in", w2v_in, "training dataset")->required();
    w2v->add_option("--format", w2v_format, "csv|jsonl")->capture_default_str();
    w2v->add_option("--dim", w2v_dim, "embedding dimension")->capture_default_str();
    w2v->add_option("--window", w2v_window, "context window")->capture_default_str();
    w2v->add_option("--min-count", w2v_min_count, "minimum byte frequency")->capture_default_str();
    w2v->add_option("--negative", w2v_negative, "negative samples per pair")->capture_default_str();
    w2v->add_option("--epochs", w2v_epochs, "training epochs")->capture_default_str();
    w2v->add_option("--lr", w2v_lr, "initial learning rate")->capture_default_str();
    w2v->add_option("--seed", w2v_seed, "rng seed")->capture_default_str();
    w2v->add_option("--out", w2v_out, "output prefix (<out>.map, <out>.emb)")
        ->capture_default_str();
    w2v->callback([&] {
        cmd_w2v_train(w2v_in, w2v_format, w2v_dim, w2v_window, w2v_min_count, w2v_negative,
                      w2v_epochs, w2v_lr, w2v_seed, w2v_out);
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    std::string train_config;
    std::vector<std::string> train_sets;
    train_cmd->add_option("--config", train_config, "INI run config");
    train_cmd->add_option("--set", train_sets, "override, section.key=value (repeatable)");
    train_cmd->callback([&] { cmd_train(train_config, train_sets); });

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a labeled dataset");
    std::string eval_ckpt, eval_data, eval_format = "csv", eval_out_csv;
    std::vector<std::string> eval_sets;
    std::int64_t eval_batch = 256;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--data", eval_data, "labeled dataset")->required();
    eval_cmd->add_option("--format", eval_format, "csv|jsonl")->capture_default_str();
    eval_cmd->add_option("--batch", eval_batch, "inference batch size")
        ->capture_default_str()
        ->check(CLI::Range(1, 2048));
    eval_cmd->add_option("--out-csv", eval_out_csv, "also write the report as CSV");
    eval_cmd->add_option("--set", eval_sets, "config override, section.key=value");
    eval_cmd->callback(
        [&] { cmd_eval(eval_ckpt, eval_data, eval_format, eval_sets, eval_out_csv, eval_batch); });

    // predict
    auto* predict = app.add_subcommand("predict", "dump per-record class probabilities");
    std::string pr_ckpt, pr_in, pr_format = "csv", pr_out = "predictions.csv";
    std::vector<std::string> pr_sets;
    std::int64_t pr_batch = 256;
    predict->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    predict->add_option("--in", pr_in, "input dataset or capture")->required();
    predict->add_option("--format", pr_format, "csv|jsonl|pcap")->capture_default_str();
    predict->add_option("--batch", pr_batch, "inference batch size")
        ->capture_default_str()
        ->check(CLI::Range(1, 2048));
    predict->add_option("--out", pr_out, "prediction dump CSV")->capture_default_str();
    predict->add_option("--set", pr_sets, "config override, section.key=value");
    predict->callback(
        [&] { cmd_predict(pr_ckpt, pr_in, pr_format, pr_batch, pr_out, pr_sets); });

    // params
    auto* params = app.add_subcommand("params", "parameter-count table for a config");
    std::string params_config;
    std::vector<std::string> params_sets;
    params->add_option("--config", params_config, "INI run config");
    params->add_option("--set", params_sets, "override, section.key=value (repeatable)");
    params->callback([&] { cmd_params(params_config, params_sets); });

    // tokenize
    auto* tok = app.add_subcommand("tokenize", "print token ids for a hex payload");
    std::string tok_scheme = "hex2int", tok_hex, tok_map, tok_vocab;
    std::int64_t tok_max_len = 0;
    tok->add_option("--tokenizer", tok_scheme, "hex2int|word2vec|hex2tok|subword")
        ->capture_default_str();
    tok->add_option("--hex", tok_hex, "payload as hex text")->required();
    tok->add_option("--map", tok_map, "byte->id map file (word2vec/hex2tok)");
    tok->add_option("--vocab", tok_vocab, "subword vocabulary file");
    tok->add_option("--max-len", tok_max_len, "0 = no padding/truncation")->capture_default_str();
    tok->callback([&] { cmd_tokenize(tok_scheme, tok_hex, tok_map, tok_vocab, tok_max_len); });

    // pcap-extract
    auto* pce = app.add_subcommand("pcap-extract", "extract TCP/UDP payloads from a capture");
    std::string pce_pcap, pce_out = "payloads.csv";
    pce->add_option("--pcap", pce_pcap, "classic pcap file")->required();
    pce->add_option("--out", pce_out, "output CSV")->capture_default_str();
    pce->callback([&] { cmd_pcap_extract(pce_pcap, pce_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const cmae::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
