#pragma once

// the classifier: two convolutional attention blocks and one multi-kernel
// block over separate embedding tables, fused by a gated ensemble head.

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cmae/embed.hpp"
#include "cmae/errors.hpp"
#include "cmae/nn/autodiff.hpp"

namespace cmae::model {

struct CmaeConfig {
    std::int64_t vocab_size = 257;
    std::int64_t embedding_dim = 64;
    bool freeze_embeddings = false;
    std::int64_t cab_filters1 = 128; // first conv stage
    std::int64_t cab_filters2 = 64;  // second conv stage; also the attention width
    std::int64_t cab_kernel = 3;
    std::int64_t attention_heads = 2;
    std::int64_t attention_ff_dim = 208;
    std::vector<std::int64_t> mkb_kernels = {3, 4, 5};
    std::int64_t mkb_filters = 128;
    std::int64_t mkb_ff_dim = 160;
    std::int64_t num_classes = 7;
    double dropout = 0.25;
    std::int32_t pad_id = 0;

    void validate() const;
};

template <typename T>
struct NamedParam {
    std::string name;
    nn::NodePtr<T> node;
    bool trainable() const { return node->requires_grad; }
};

struct ParameterCount {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
    std::int64_t frozen = 0;
    std::vector<std::pair<std::string, std::int64_t>> per_param;
};

template <typename T>
struct CmaeModel {
    CmaeConfig config;

    nn::NodePtr<T> emb1, emb2, emb3;

    struct Cab {
        nn::NodePtr<T> conv1_w, conv1_b, conv2_w, conv2_b;
        nn::AttentionParams<T> attn;
        nn::NodePtr<T> norm1_g, norm1_b;
        nn::NodePtr<T> ff1_w, ff1_b, ff2_w, ff2_b;
        nn::NodePtr<T> norm2_g, norm2_b;
    };
    Cab cab1, cab2;

    struct Mkb {
        std::vector<nn::NodePtr<T>> conv_w, conv_b; // one per kernel size
        nn::NodePtr<T> ff1_w, ff1_b, ff2_w, ff2_b;
    };
    Mkb mkb;

    nn::NodePtr<T> gate_w, gate_b, cls_w, cls_b;

    std::vector<NamedParam<T>> params; // registration order is the checkpoint order
    std::mt19937_64 dropout_rng{0x9e3779b97f4a7c15ull};
    mutable std::map<std::int64_t, nn::Tensor<T>> pe_cache;

    const nn::Tensor<T>& positional_table(std::int64_t len) const {
        auto it = pe_cache.find(len);
        if (it == pe_cache.end())
            it = pe_cache.emplace(len, nn::positional_encoding<T>(len, config.cab_filters2)).first;
        return it->second;
    }

    // sequences shorter than 4 cannot survive two window-2 pools; right-pad.
    nn::IntTensor pad_short(const nn::IntTensor& ids) const {
        const std::int64_t batch = ids.dim(0), len = ids.dim(1);
        nn::IntTensor out = nn::IntTensor::full({batch, 4}, config.pad_id);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t t = 0; t < len; ++t) out[b * 4 + t] = ids[b * len + t];
        return out;
    }

    nn::NodePtr<T> cab_forward(const nn::IntTensor& ids, const Cab& cab, const nn::NodePtr<T>& emb,
                               bool training) {
        auto x = nn::embedding(ids, emb);
        auto c1 = nn::gelu(nn::conv1d(x, cab.conv1_w, cab.conv1_b));
        auto p1 = nn::maxpool1d(c1);
        auto c2 = nn::gelu(nn::conv1d(p1, cab.conv2_w, cab.conv2_b));
        auto p2 = nn::maxpool1d(c2);

        auto positioned = nn::add_positional(p2, positional_table(p2->value.dim(1)));
        auto attended = nn::multi_head_attention(positioned, cab.attn, config.attention_heads);
        attended = nn::dropout(attended, config.dropout, training, dropout_rng);
        auto normed1 = nn::layer_norm(nn::add(positioned, attended), cab.norm1_g, cab.norm1_b);

        auto hidden = nn::gelu(nn::dense(normed1, cab.ff1_w, cab.ff1_b));
        hidden = nn::dropout(hidden, config.dropout, training, dropout_rng);
        auto projected = nn::dense(hidden, cab.ff2_w, cab.ff2_b);
        auto normed2 = nn::layer_norm(nn::add(normed1, projected), cab.norm2_g, cab.norm2_b);
        return nn::global_maxpool1d(normed2);
    }

    nn::NodePtr<T> mkb_forward(const nn::IntTensor& ids, bool training) {
        auto x = nn::embedding(ids, emb3);
        std::vector<nn::NodePtr<T>> branches;
        branches.reserve(mkb.conv_w.size());
        for (std::size_t i = 0; i < mkb.conv_w.size(); ++i)
            branches.push_back(nn::global_maxpool1d(nn::gelu(nn::conv1d(x, mkb.conv_w[i], mkb.conv_b[i]))));
        auto cat = nn::concat_lastdim(branches);
        auto hidden = nn::gelu(nn::dense(cat, mkb.ff1_w, mkb.ff1_b));
        hidden = nn::dropout(hidden, config.dropout, training, dropout_rng);
        return nn::dense(hidden, mkb.ff2_w, mkb.ff2_b);
    }

    nn::NodePtr<T> ensemble_forward(const nn::NodePtr<T>& a1, const nn::NodePtr<T>& a2,
                                    const nn::NodePtr<T>& a3) {
        auto avg = nn::average3(a1, a2, a3);
        auto gate = nn::sigmoid(nn::dense(avg, gate_w, gate_b));
        auto scaled = nn::mul(avg, gate);
        auto logits = nn::dense(scaled, cls_w, cls_b);
        return nn::softmax_lastdim(logits);
    }

    // ids: [batch, len]; returns class probabilities [batch, num_classes].
    nn::NodePtr<T> forward(const nn::IntTensor& ids, bool training) {
        nn::detail::require_shape(ids.rank() == 2, "forward: rank-2 id tensor expected");
        const nn::IntTensor& in = ids.dim(1) >= 4 ? ids : pad_short(ids);
        auto a1 = cab_forward(in, cab1, emb1, training);
        auto a2 = cab_forward(in, cab2, emb2, training);
        auto a3 = mkb_forward(in, training);
        return ensemble_forward(a1, a2, a3);
    }

    void zero_grad() {
        for (auto& p : params)
            if (!p.node->grad.data.empty()) p.node->zero_grad();
    }

    ParameterCount count_parameters() const {
        ParameterCount c;
        for (const auto& p : params) {
            const std::int64_t n = p.node->value.numel();
            c.total += n;
            (p.trainable() ? c.trainable : c.frozen) += n;
            c.per_param.emplace_back(p.name, n);
        }
        return c;
    }
};

namespace detail {

template <typename T>
nn::NodePtr<T> xavier_param(std::vector<std::int64_t> shape, std::int64_t fan_in,
                            std::int64_t fan_out, std::mt19937_64& rng) {
    nn::Tensor<T> t(shape);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data)
        v = static_cast<T>((2.0 * nn::detail::uniform01(rng) - 1.0) * bound);
    return nn::make_leaf(std::move(t), true);
}

template <typename T>
nn::NodePtr<T> const_param(std::vector<std::int64_t> shape, T fill) {
    nn::Tensor<T> t = nn::Tensor<T>::full(shape, fill);
    return nn::make_leaf(std::move(t), true);
}

} // namespace detail

// assemble a model. the three embedding tables come from the embedding
// module (random, word2vec, or external); all other weights are
// xavier-uniform from the given seed, biases zero, norm gains one.
template <typename T>
CmaeModel<T> build_model(const CmaeConfig& config,
                         const embed::EmbeddingMatrix& table1,
                         const embed::EmbeddingMatrix& table2,
                         const embed::EmbeddingMatrix& table3,
                         std::uint64_t seed) {
    config.validate();
    for (const auto* t : {&table1, &table2, &table3}) {
        if (t->vocab_size != config.vocab_size || t->dim != config.embedding_dim)
            raise(ErrorCode::ConfigError, "embedding table shape does not match model config");
    }

    CmaeModel<T> m;
    m.config = config;
    m.dropout_rng.seed(seed ^ 0x5851f42d4c957f2dull);
    std::mt19937_64 rng(seed);

    auto emb_node = [&](const embed::EmbeddingMatrix& t) {
        nn::Tensor<T> w({t.vocab_size, t.dim});
        for (std::size_t i = 0; i < t.weights.size(); ++i) w.data[i] = static_cast<T>(t.weights[i]);
        const bool trainable = !t.frozen && !config.freeze_embeddings;
        return nn::make_leaf(std::move(w), trainable);
    };
    m.emb1 = emb_node(table1);
    m.emb2 = emb_node(table2);
    m.emb3 = emb_node(table3);

    const std::int64_t e = config.embedding_dim;
    const std::int64_t f1 = config.cab_filters1, f2 = config.cab_filters2;
    const std::int64_t k = config.cab_kernel;
    const std::int64_t ff = config.attention_ff_dim;

    auto build_cab = [&]() {
        typename CmaeModel<T>::Cab cab;
        cab.conv1_w = detail::xavier_param<T>({k, e, f1}, k * e, k * f1, rng);
        cab.conv1_b = detail::const_param<T>({f1}, T(0));
        cab.conv2_w = detail::xavier_param<T>({k, f1, f2}, k * f1, k * f2, rng);
        cab.conv2_b = detail::const_param<T>({f2}, T(0));
        for (auto* wp : {&cab.attn.wq, &cab.attn.wk, &cab.attn.wv, &cab.attn.wo})
            *wp = detail::xavier_param<T>({f2, f2}, f2, f2, rng);
        for (auto* bp : {&cab.attn.bq, &cab.attn.bk, &cab.attn.bv, &cab.attn.bo})
            *bp = detail::const_param<T>({f2}, T(0));
        cab.norm1_g = detail::const_param<T>({f2}, T(1));
        cab.norm1_b = detail::const_param<T>({f2}, T(0));
        cab.ff1_w = detail::xavier_param<T>({f2, ff}, f2, ff, rng);
        cab.ff1_b = detail::const_param<T>({ff}, T(0));
        cab.ff2_w = detail::xavier_param<T>({ff, f2}, ff, f2, rng);
        cab.ff2_b = detail::const_param<T>({f2}, T(0));
        cab.norm2_g = detail::const_param<T>({f2}, T(1));
        cab.norm2_b = detail::const_param<T>({f2}, T(0));
        return cab;
    };
    m.cab1 = build_cab();
    m.cab2 = build_cab();

    const std::int64_t mf = config.mkb_filters;
    for (std::int64_t mk : config.mkb_kernels) {
        m.mkb.conv_w.push_back(detail::xavier_param<T>({mk, e, mf}, mk * e, mk * mf, rng));
        m.mkb.conv_b.push_back(detail::const_param<T>({mf}, T(0)));
    }
    const std::int64_t cat_w = mf * static_cast<std::int64_t>(config.mkb_kernels.size());
    m.mkb.ff1_w = detail::xavier_param<T>({cat_w, config.mkb_ff_dim}, cat_w, config.mkb_ff_dim, rng);
    m.mkb.ff1_b = detail::const_param<T>({config.mkb_ff_dim}, T(0));
    m.mkb.ff2_w = detail::xavier_param<T>({config.mkb_ff_dim, f2}, config.mkb_ff_dim, f2, rng);
    m.mkb.ff2_b = detail::const_param<T>({f2}, T(0));

    m.gate_w = detail::xavier_param<T>({f2, f2}, f2, f2, rng);
    m.gate_b = detail::const_param<T>({f2}, T(0));
    m.cls_w = detail::xavier_param<T>({f2, config.num_classes}, f2, config.num_classes, rng);
    m.cls_b = detail::const_param<T>({config.num_classes}, T(0));

    auto reg = [&](const std::string& name, const nn::NodePtr<T>& node) {
        m.params.push_back({name, node});
    };
    reg("emb1.weight", m.emb1);
    reg("emb2.weight", m.emb2);
    reg("emb3.weight", m.emb3);
    auto reg_cab = [&](const std::string& prefix, const typename CmaeModel<T>::Cab& cab) {
        reg(prefix + ".conv1.weight", cab.conv1_w);
        reg(prefix + ".conv1.bias", cab.conv1_b);
        reg(prefix + ".conv2.weight", cab.conv2_w);
        reg(prefix + ".conv2.bias", cab.conv2_b);
        reg(prefix + ".attn.wq", cab.attn.wq);
        reg(prefix + ".attn.bq", cab.attn.bq);
        reg(prefix + ".attn.wk", cab.attn.wk);
        reg(prefix + ".attn.bk", cab.attn.bk);
        reg(prefix + ".attn.wv", cab.attn.wv);
        reg(prefix + ".attn.bv", cab.attn.bv);
        reg(prefix + ".attn.wo", cab.attn.wo);
        reg(prefix + ".attn.bo", cab.attn.bo);
        reg(prefix + ".norm1.gain", cab.norm1_g);
        reg(prefix + ".norm1.offset", cab.norm1_b);
        reg(prefix + ".ff1.weight", cab.ff1_w);
        reg(prefix + ".ff1.bias", cab.ff1_b);
        reg(prefix + ".ff2.weight", cab.ff2_w);
        reg(prefix + ".ff2.bias", cab.ff2_b);
        reg(prefix + ".norm2.gain", cab.norm2_g);
        reg(prefix + ".norm2.offset", cab.norm2_b);
    };
    reg_cab("cab1", m.cab1);
    reg_cab("cab2", m.cab2);
    for (std::size_t i = 0; i < m.mkb.conv_w.size(); ++i) {
        const std::string base = "mkb.conv_k" + std::to_string(config.mkb_kernels[i]);
        reg(base + ".weight", m.mkb.conv_w[i]);
        reg(base + ".bias", m.mkb.conv_b[i]);
    }
    reg("mkb.ff1.weight", m.mkb.ff1_w);
    reg("mkb.ff1.bias", m.mkb.ff1_b);
    reg("mkb.ff2.weight", m.mkb.ff2_w);
    reg("mkb.ff2.bias", m.mkb.ff2_b);
    reg("ensemble.gate.weight", m.gate_w);
    reg("ensemble.gate.bias", m.gate_b);
    reg("ensemble.classifier.weight", m.cls_w);
    reg("ensemble.classifier.bias", m.cls_b);
    return m;
}

inline void CmaeConfig::validate() const {
    if (vocab_size < 2) raise(ErrorCode::ConfigError, "vocab_size must be at least 2");
    if (embedding_dim < 1) raise(ErrorCode::ConfigError, "embedding_dim must be positive");
    if (cab_filters1 < 1 || cab_filters2 < 1 || mkb_filters < 1)
        raise(ErrorCode::ConfigError, "filter counts must be positive");
    if (cab_kernel < 1) raise(ErrorCode::ConfigError, "cab_kernel must be positive");
    if (attention_heads < 1 || cab_filters2 % attention_heads != 0)
        raise(ErrorCode::ConfigError, "attention width must divide evenly into heads");
    if (attention_ff_dim < 1 || mkb_ff_dim < 1)
        raise(ErrorCode::ConfigError, "feed-forward widths must be positive");
    if (mkb_kernels.empty()) raise(ErrorCode::ConfigError, "mkb needs at least one kernel size");
    for (std::int64_t mk : mkb_kernels)
        if (mk < 1) raise(ErrorCode::ConfigError, "mkb kernel sizes must be positive");
    if (num_classes < 2) raise(ErrorCode::ConfigError, "num_classes must be at least 2");
    if (dropout < 0.0 || dropout >= 1.0) raise(ErrorCode::ConfigError, "dropout must be in [0, 1)");
    if (pad_id < 0 || pad_id >= vocab_size) raise(ErrorCode::ConfigError, "pad_id outside vocabulary");
}

} // namespace cmae::model
