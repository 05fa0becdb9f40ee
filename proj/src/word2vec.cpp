#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "cmae/embed.hpp"
#include "cmae/rng.hpp"

// skip-gram with negative sampling over byte streams. single-threaded and
// fully deterministic: every random draw (init, window reduction, negative
// samples) comes from one seeded generator in a fixed order.

namespace cmae::embed {

namespace {

constexpr std::size_t kUnigramTableSize = 1 << 20;
constexpr double kUnigramPower = 0.75;

double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

Word2VecResult train_word2vec(const std::vector<std::vector<std::uint8_t>>& corpus,
                              const Word2VecParams& params, std::uint64_t seed) {
    if (params.dim < 1 || params.window < 1 || params.min_count < 1 ||
        params.negative_samples < 0 || params.epochs < 1 || params.learning_rate <= 0)
        raise(ErrorCode::ConfigError, "invalid word2vec parameters");

    // frequency-ordered vocabulary: count >= min_count, descending count,
    // byte value breaks ties deterministically
    std::array<std::int64_t, 256> counts{};
    for (const auto& seq : corpus)
        for (std::uint8_t b : seq) ++counts[b];

    std::vector<std::uint8_t> vocab;
    for (int b = 0; b < 256; ++b)
        if (counts[static_cast<std::size_t>(b)] >= params.min_count)
            vocab.push_back(static_cast<std::uint8_t>(b));
    std::sort(vocab.begin(), vocab.end(), [&](std::uint8_t a, std::uint8_t b) {
        if (counts[a] != counts[b]) return counts[a] > counts[b];
        return a < b;
    });
    if (vocab.empty())
        raise(ErrorCode::EmptyVocabulary,
              "no byte token reaches min_count " + std::to_string(params.min_count));

    tokenize::TokenMap map;
    map.pad_id = 0;
    map.provenance = tokenize::MapProvenance::Word2Vec;
    for (auto& id : map.byte_to_id) id = 0; // below min_count -> pad
    for (std::size_t i = 0; i < vocab.size(); ++i)
        map.byte_to_id[vocab[i]] = static_cast<std::int32_t>(i + 1);

    const std::int64_t v = static_cast<std::int64_t>(vocab.size());
    const std::int64_t dim = params.dim;
    std::mt19937_64 gen(seed);

    // row 0 is the pad row and stays exactly zero; syn0 rows 1..v are the
    // learned input vectors, syn1 the negative-sampling output vectors
    std::vector<double> syn0(static_cast<std::size_t>((v + 1) * dim), 0.0);
    std::vector<double> syn1(static_cast<std::size_t>((v + 1) * dim), 0.0);
    for (std::int64_t r = 1; r <= v; ++r)
        for (std::int64_t c = 0; c < dim; ++c)
            syn0[static_cast<std::size_t>(r * dim + c)] =
                (rng::uniform01(gen) - 0.5) / static_cast<double>(dim);

    // unigram table over counts^0.75 for negative sampling
    std::vector<std::int32_t> table(kUnigramTableSize);
    {
        double total = 0;
        for (std::uint8_t b : vocab) total += std::pow(static_cast<double>(counts[b]), kUnigramPower);
        std::size_t pos = 0;
        double cumulative = 0;
        for (std::size_t i = 0; i < vocab.size() && pos < table.size(); ++i) {
            cumulative += std::pow(static_cast<double>(counts[vocab[i]]), kUnigramPower) / total;
            const std::size_t end = std::min(
                table.size(), static_cast<std::size_t>(cumulative * static_cast<double>(table.size())));
            for (; pos < end; ++pos) table[pos] = static_cast<std::int32_t>(i + 1);
        }
        for (; pos < table.size(); ++pos) table[pos] = static_cast<std::int32_t>(v);
    }

    // training stream: sequences as in-vocabulary ids, OOV bytes dropped
    std::vector<std::vector<std::int32_t>> stream;
    std::int64_t total_tokens = 0;
    for (const auto& seq : corpus) {
        std::vector<std::int32_t> ids;
        ids.reserve(seq.size());
        for (std::uint8_t b : seq)
            if (map.byte_to_id[b] != 0) ids.push_back(map.byte_to_id[b]);
        total_tokens += static_cast<std::int64_t>(ids.size());
        if (!ids.empty()) stream.push_back(std::move(ids));
    }
    if (total_tokens == 0)
        raise(ErrorCode::EmptyVocabulary, "corpus has no in-vocabulary tokens");

    const double start_lr = params.learning_rate;
    const double min_lr = start_lr * 1e-4;
    const std::int64_t schedule_total = params.epochs * total_tokens;
    std::int64_t processed = 0;
    std::vector<double> accum(static_cast<std::size_t>(dim));

    for (std::int64_t epoch = 0; epoch < params.epochs; ++epoch) {
        for (const auto& ids : stream) {
            const std::int64_t n = static_cast<std::int64_t>(ids.size());
            for (std::int64_t center = 0; center < n; ++center) {
                const double progress =
                    static_cast<double>(processed) / static_cast<double>(schedule_total);
                const double alpha = std::max(min_lr, start_lr * (1.0 - progress));
                ++processed;

                // dynamic window: uniform reduction as in the reference tool
                const std::int64_t reduce =
                    static_cast<std::int64_t>(rng::bounded(gen, static_cast<std::uint64_t>(params.window)));
                const std::int64_t span = params.window - reduce;
                const std::int32_t center_id = ids[static_cast<std::size_t>(center)];
                double* center_vec = syn0.data() + static_cast<std::size_t>(center_id) * dim;

                for (std::int64_t off = -span; off <= span; ++off) {
                    if (off == 0) continue;
                    const std::int64_t ctx = center + off;
                    if (ctx < 0 || ctx >= n) continue;
                    const std::int32_t context_id = ids[static_cast<std::size_t>(ctx)];

                    std::fill(accum.begin(), accum.end(), 0.0);
                    for (std::int64_t d = 0; d <= params.negative_samples; ++d) {
                        std::int32_t target;
                        double label;
                        if (d == 0) {
                            target = context_id;
                            label = 1.0;
                        } else {
                            target = table[rng::bounded(gen, table.size())];
                            if (target == context_id) continue;
                            label = 0.0;
                        }
                        double* out_vec = syn1.data() + static_cast<std::size_t>(target) * dim;
                        double f = 0;
                        for (std::int64_t c = 0; c < dim; ++c)
                            f += center_vec[c] * out_vec[c];
                        const double g = (label - sigmoid(f)) * alpha;
                        for (std::int64_t c = 0; c < dim; ++c) {
                            accum[static_cast<std::size_t>(c)] += g * out_vec[c];
                            out_vec[c] += g * center_vec[c];
                        }
                    }
                    for (std::int64_t c = 0; c < dim; ++c)
                        center_vec[c] += accum[static_cast<std::size_t>(c)];
                }
            }
        }
    }

    Word2VecResult result;
    result.vocabulary = vocab;
    result.map = map;
    result.matrix.vocab_size = v + 1;
    result.matrix.dim = dim;
    result.matrix.frozen = false;
    result.matrix.provenance = Provenance::Word2Vec;
    result.matrix.weights.resize(syn0.size());
    for (std::size_t i = 0; i < syn0.size(); ++i)
        result.matrix.weights[i] = static_cast<float>(syn0[i]);
    return result;
}

} // namespace cmae::embed
